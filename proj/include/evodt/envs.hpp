#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evodt/decision_transformer.hpp"
#include "evodt/nn.hpp"
#include "evodt/vbn.hpp"

namespace evodt::envs {

struct EnvStep {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual std::string name() const = 0;
  virtual std::size_t obs_dim() const = 0;
  virtual std::size_t act_dim() const = 0;
  virtual std::size_t max_steps() const = 0;

  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  /// Throws ContractError before reset, after done, or on a wrong action size.
  virtual EnvStep step(std::span<const double> action) = 0;
};

// Reach the origin in the plane. The start lies on the unit circle at a
// seed-dependent angle; each step moves by 0.2 * action after clipping the
// action to unit L2 norm, and rewards -distance after the move.
class PointTargetEnv final : public Env {
 public:
  static constexpr std::size_t kHorizon = 50;
  static constexpr double kStepSize = 0.2;

  std::string name() const override { return "point_target"; }
  std::size_t obs_dim() const override { return 2; }
  std::size_t act_dim() const override { return 2; }
  std::size_t max_steps() const override { return kHorizon; }

  std::vector<double> reset(std::uint64_t seed) override;
  EnvStep step(std::span<const double> action) override;

  /// Resets to an explicit start (tests).
  std::vector<double> reset_at(double x, double y);

 private:
  std::vector<double> observe() const { return {pos_[0], pos_[1]}; }

  double pos_[2] = {0.0, 0.0};
  std::size_t t_ = 0;
  bool ready_ = false;
};

// Cells 0..8, start at 4. At t = 0 the observation carries a +-1 cue and the
// agent cannot move; afterwards the cue reads 0. From t = 1 the agent moves
// by sign(action[0]). Reaching the cued end (+1 -> cell 8, -1 -> cell 0)
// pays +10, the other end -10; running out of the 12 steps pays 0.
// Observation: ((cell - 4) / 4, cue). Even seeds cue +1, odd seeds -1.
class KeyCorridorEnv final : public Env {
 public:
  static constexpr std::size_t kHorizon = 12;
  static constexpr int kLength = 9;
  static constexpr double kPayoff = 10.0;

  std::string name() const override { return "key_corridor"; }
  std::size_t obs_dim() const override { return 2; }
  std::size_t act_dim() const override { return 1; }
  std::size_t max_steps() const override { return kHorizon; }

  std::vector<double> reset(std::uint64_t seed) override;
  EnvStep step(std::span<const double> action) override;

  int cue() const { return cue_; }

 private:
  std::vector<double> observe() const;

  int cell_ = 4;
  int cue_ = 1;
  std::size_t t_ = 0;
  bool ready_ = false;
};

/// "point_target" or "key_corridor"; anything else is a ConfigError.
std::unique_ptr<Env> make_env(std::string_view name);

struct EnvDefaults {
  double rtg;        // unscaled initial return-to-go
  double rtg_scale;
};

EnvDefaults env_defaults(std::string_view name);

class Agent {
 public:
  virtual ~Agent() = default;

  virtual void begin_episode(const dt::RtgConfig& /*rtg*/) {}
  virtual std::vector<double> act(std::span<const double> obs) = 0;
  virtual void observe(std::span<const double> /*obs*/, std::span<const double> /*action*/, double /*reward*/) {}
};

class FeedforwardAgent final : public Agent {
 public:
  FeedforwardAgent(std::span<const double> params, const nn::PolicySpec& spec, const es::VbnStats* vbn = nullptr);

  std::vector<double> act(std::span<const double> obs) override;

 private:
  nn::MlpView mlp_;
  const es::VbnStats* vbn_;
  std::vector<double> scratch_;
};

class DecisionTransformerAgent final : public Agent {
 public:
  DecisionTransformerAgent(std::span<const double> params, const nn::PolicySpec& spec,
                           const es::VbnStats* vbn = nullptr);

  void begin_episode(const dt::RtgConfig& rtg) override;
  std::vector<double> act(std::span<const double> obs) override;
  void observe(std::span<const double> obs, std::span<const double> action, double reward) override;

  const dt::EpisodeContext& context() const { return ctx_; }

 private:
  nn::DecisionTransformerView view_;
  const es::VbnStats* vbn_;
  dt::EpisodeContext ctx_;
};

// PointTarget teacher: action = -obs, clipped to unit norm.
class ProportionalController final : public Agent {
 public:
  std::vector<double> act(std::span<const double> obs) override;
};

// KeyCorridor optimum: remember the t = 0 cue and walk towards it.
class SignalFollower final : public Agent {
 public:
  void begin_episode(const dt::RtgConfig& rtg) override;
  std::vector<double> act(std::span<const double> obs) override;

 private:
  double cue_ = 0.0;
  bool seen_ = false;
};

/// Params are aliased, not copied.
std::unique_ptr<Agent> make_policy_agent(std::span<const double> params, const nn::PolicySpec& spec,
                                         const es::VbnStats* vbn = nullptr);

/// Teacher for an environment by name ("point_target" -> proportional controller,
/// "key_corridor" -> signal follower).
std::unique_ptr<Agent> make_scripted_agent(std::string_view env_name);

struct Transition {
  std::vector<double> obs;
  std::vector<double> action;
  double reward = 0.0;
};

struct RolloutResult {
  double total_return = 0.0;  // unscaled
  std::size_t steps = 0;
  std::vector<Transition> trajectory;  // filled when capture is requested

  bool operator==(const RolloutResult& o) const;
};

RolloutResult rollout(Agent& agent, Env& env, std::uint64_t seed, const dt::RtgConfig& rtg, bool capture = false);

/// Mean return over seeds. Throws ContractError on an empty seed list.
double evaluate(Agent& agent, Env& env, std::span<const std::uint64_t> seeds, const dt::RtgConfig& rtg);

}  // namespace evodt::envs
