#pragma once

// Decision transformer agent plumbing: the cropped (rtg, obs, act) history,
// return-to-go bookkeeping and token assembly around nn::transformer_forward.

#include <cstddef>
#include <span>
#include <vector>

#include "evodt/nn.hpp"
#include "evodt/vbn.hpp"

namespace evodt::dt {

struct RtgConfig {
  double initial_target = 0.0;  // unscaled, as an operator would pass it
  double scale = 1000.0;

  void validate() const;
};

struct Triplet {
  double rtg = 0.0;  // already divided by scale
  std::vector<double> obs;
  std::vector<double> act;
};

// Rolling window of at most `capacity` past timesteps. Storage never grows
// past the window regardless of episode length.
class EpisodeContext {
 public:
  EpisodeContext(std::size_t capacity, RtgConfig cfg);

  std::size_t capacity() const { return ring_.size(); }
  std::size_t size() const { return size_; }
  std::size_t timestep_index() const { return timestep_; }
  double pending_rtg() const { return pending_rtg_; }
  double scale() const { return scale_; }

  /// i = 0 is the oldest stored timestep.
  const Triplet& at(std::size_t i) const;

  /// Stores (pending rtg, obs, action), then rtg -= reward / scale.
  void record_step(std::span<const double> obs, std::span<const double> action, double reward);

  /// Replay hook: overrides the rtg of the upcoming timestep (already scaled).
  void set_pending_rtg(double scaled_rtg) { pending_rtg_ = scaled_rtg; }

 private:
  std::vector<Triplet> ring_;
  std::size_t head_ = 0;  // index of the oldest entry
  std::size_t size_ = 0;
  std::size_t timestep_ = 0;
  double pending_rtg_ = 0.0;
  double scale_ = 1.0;
};

EpisodeContext init_context(const RtgConfig& cfg, std::size_t context_len);

enum class TokenKind { kReturnToGo, kObservation, kAction };

struct Token {
  TokenKind kind;
  std::vector<double> input;
  std::size_t position;  // timestep index shared by all three tokens of a timestep
};

struct TokenSequence {
  std::vector<Token> tokens;
  std::size_t current_obs_index = 0;  // the token the action is decoded from
};

/// The newest context_len - 1 stored timesteps followed by (rtg, obs, zero
/// action placeholder) for the current one: at most 3 * capacity tokens.
TokenSequence build_tokens(const EpisodeContext& ctx, std::span<const double> current_obs, std::size_t act_dim);

/// Per-kind embedding plus the learned position row, then embed_norm.
/// Observations pass through `vbn` first when given. A position beyond the
/// table is a ConfigError.
nn::Matrix embed_tokens(const nn::DecisionTransformerView& dt, const TokenSequence& seq,
                        const es::VbnStats* vbn = nullptr);

/// Linear decode of the final-normed output at the current observation token.
std::vector<double> act_pre_squash(const nn::DecisionTransformerView& dt, const EpisodeContext& ctx,
                                   std::span<const double> current_obs, const es::VbnStats* vbn = nullptr);

/// tanh of act_pre_squash.
std::vector<double> act(const nn::DecisionTransformerView& dt, const EpisodeContext& ctx,
                        std::span<const double> current_obs, const es::VbnStats* vbn = nullptr);
std::vector<double> act(std::span<const double> params, const nn::PolicySpec& spec, const EpisodeContext& ctx,
                        std::span<const double> current_obs, const es::VbnStats* vbn = nullptr);

}  // namespace evodt::dt
