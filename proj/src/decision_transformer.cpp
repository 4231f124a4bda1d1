#include "evodt/decision_transformer.hpp"

#include <cmath>
#include <string>

#include "evodt/errors.hpp"

namespace evodt::dt {

void RtgConfig::validate() const {
  if (!(scale > 0.0)) throw ContractError("return-to-go scale must be positive");
}

EpisodeContext::EpisodeContext(std::size_t capacity, RtgConfig cfg) {
  cfg.validate();
  if (capacity == 0) throw ContractError("context capacity must be positive");
  ring_.resize(capacity);
  scale_ = cfg.scale;
  pending_rtg_ = cfg.initial_target / cfg.scale;
}

const Triplet& EpisodeContext::at(std::size_t i) const {
  if (i >= size_) throw ContractError("context index out of range");
  return ring_[(head_ + i) % ring_.size()];
}

void EpisodeContext::record_step(std::span<const double> obs, std::span<const double> action, double reward) {
  if (size_ > 0) {
    const Triplet& prev = at(size_ - 1);
    if (prev.obs.size() != obs.size() || prev.act.size() != action.size()) {
      throw ContractError("step dims differ from earlier steps in this context");
    }
  }
  std::size_t slot;
  if (size_ == ring_.size()) {
    slot = head_;
    head_ = (head_ + 1) % ring_.size();
  } else {
    slot = (head_ + size_) % ring_.size();
    ++size_;
  }
  Triplet& t = ring_[slot];
  t.rtg = pending_rtg_;
  t.obs.assign(obs.begin(), obs.end());
  t.act.assign(action.begin(), action.end());
  pending_rtg_ -= reward / scale_;
  ++timestep_;
}

EpisodeContext init_context(const RtgConfig& cfg, std::size_t context_len) { return EpisodeContext(context_len, cfg); }

TokenSequence build_tokens(const EpisodeContext& ctx, std::span<const double> current_obs, std::size_t act_dim) {
  TokenSequence seq;
  const std::size_t past = std::min(ctx.size(), ctx.capacity() - 1);
  const std::size_t first = ctx.size() - past;
  seq.tokens.reserve(3 * (past + 1));
  for (std::size_t i = first; i < ctx.size(); ++i) {
    const Triplet& t = ctx.at(i);
    const std::size_t pos = ctx.timestep_index() - ctx.size() + i;
    seq.tokens.push_back({TokenKind::kReturnToGo, {t.rtg}, pos});
    seq.tokens.push_back({TokenKind::kObservation, t.obs, pos});
    seq.tokens.push_back({TokenKind::kAction, t.act, pos});
  }
  const std::size_t now = ctx.timestep_index();
  seq.tokens.push_back({TokenKind::kReturnToGo, {ctx.pending_rtg()}, now});
  seq.current_obs_index = seq.tokens.size();
  seq.tokens.push_back({TokenKind::kObservation, std::vector<double>(current_obs.begin(), current_obs.end()), now});
  seq.tokens.push_back({TokenKind::kAction, std::vector<double>(act_dim, 0.0), now});
  return seq;
}

nn::Matrix embed_tokens(const nn::DecisionTransformerView& dt, const TokenSequence& seq, const es::VbnStats* vbn) {
  const std::size_t e = dt.embed_obs.out;
  nn::Matrix out(seq.tokens.size(), e);
  std::vector<double> raw(e);
  std::vector<double> normed_obs;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const Token& tok = seq.tokens[i];
    if (tok.position >= dt.max_positions) {
      throw ConfigError("timestep " + std::to_string(tok.position) + " exceeds max_episode_len " +
                        std::to_string(dt.max_positions));
    }
    switch (tok.kind) {
      case TokenKind::kReturnToGo:
        dt.embed_rtg.apply(tok.input, raw);
        break;
      case TokenKind::kObservation:
        if (vbn != nullptr) {
          normed_obs.resize(tok.input.size());
          es::vbn_normalize_into(*vbn, tok.input, normed_obs);
          dt.embed_obs.apply(normed_obs, raw);
        } else {
          dt.embed_obs.apply(tok.input, raw);
        }
        break;
      case TokenKind::kAction:
        dt.embed_act.apply(tok.input, raw);
        break;
    }
    const double* pos = dt.position_table.data() + tok.position * e;
    for (std::size_t c = 0; c < e; ++c) raw[c] += pos[c];
    dt.embed_norm.apply(raw, out.row(i));
  }
  return out;
}

std::vector<double> act_pre_squash(const nn::DecisionTransformerView& dt, const EpisodeContext& ctx,
                                   std::span<const double> current_obs, const es::VbnStats* vbn) {
  if (current_obs.size() != dt.embed_obs.in) throw ContractError("observation size mismatch");
  const TokenSequence seq = build_tokens(ctx, current_obs, dt.embed_act.in);
  const nn::Matrix tokens = embed_tokens(dt, seq, vbn);
  const std::vector<double> state = nn::transformer_forward_at(dt, tokens, seq.current_obs_index);
  std::vector<double> normed(state.size());
  dt.final_norm.apply(state, normed);
  std::vector<double> action(dt.action_head.out);
  dt.action_head.apply(normed, action);
  return action;
}

std::vector<double> act(const nn::DecisionTransformerView& dt, const EpisodeContext& ctx,
                        std::span<const double> current_obs, const es::VbnStats* vbn) {
  auto a = act_pre_squash(dt, ctx, current_obs, vbn);
  for (double& v : a) v = std::tanh(v);
  return a;
}

std::vector<double> act(std::span<const double> params, const nn::PolicySpec& spec, const EpisodeContext& ctx,
                        std::span<const double> current_obs, const es::VbnStats* vbn) {
  return act(nn::unflatten_dt(params, spec), ctx, current_obs, vbn);
}

}  // namespace evodt::dt
