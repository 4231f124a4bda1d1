#include "evodt/envs.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "evodt/errors.hpp"

namespace evodt::envs {

namespace {

void clip_unit_norm(std::span<double> a) {
  double sq = 0.0;
  for (double v : a) sq += v * v;
  if (sq > 1.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (double& v : a) v *= inv;
  }
}

void check_action(std::span<const double> action, std::size_t dim) {
  if (action.size() != dim) throw ContractError("action has wrong dimension");
}

}  // namespace

std::vector<double> PointTargetEnv::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const double a = angle(rng);
  return reset_at(std::cos(a), std::sin(a));
}

std::vector<double> PointTargetEnv::reset_at(double x, double y) {
  pos_[0] = x;
  pos_[1] = y;
  t_ = 0;
  ready_ = true;
  return observe();
}

EnvStep PointTargetEnv::step(std::span<const double> action) {
  if (!ready_) throw ContractError("step called before reset or after the episode ended");
  check_action(action, 2);
  double a[2] = {action[0], action[1]};
  clip_unit_norm(a);
  pos_[0] += kStepSize * a[0];
  pos_[1] += kStepSize * a[1];
  ++t_;
  EnvStep s;
  s.obs = observe();
  s.reward = -std::hypot(pos_[0], pos_[1]);
  s.done = t_ >= kHorizon;
  if (s.done) ready_ = false;
  return s;
}

std::vector<double> KeyCorridorEnv::reset(std::uint64_t seed) {
  cue_ = (seed % 2 == 0) ? 1 : -1;
  cell_ = kLength / 2;
  t_ = 0;
  ready_ = true;
  return observe();
}

std::vector<double> KeyCorridorEnv::observe() const {
  const double half = static_cast<double>(kLength / 2);
  return {(cell_ - kLength / 2) / half, t_ == 0 ? static_cast<double>(cue_) : 0.0};
}

EnvStep KeyCorridorEnv::step(std::span<const double> action) {
  if (!ready_) throw ContractError("step called before reset or after the episode ended");
  check_action(action, 1);
  if (t_ > 0) {
    if (action[0] > 0.0) ++cell_;
    if (action[0] < 0.0) --cell_;
  }
  ++t_;
  EnvStep s;
  s.obs = observe();
  if (cell_ == 0 || cell_ == kLength - 1) {
    const int end = cell_ == 0 ? -1 : 1;
    s.reward = end == cue_ ? kPayoff : -kPayoff;
    s.done = true;
  } else {
    s.done = t_ >= kHorizon;
  }
  if (s.done) ready_ = false;
  return s;
}

std::unique_ptr<Env> make_env(std::string_view name) {
  if (name == "point_target") return std::make_unique<PointTargetEnv>();
  if (name == "key_corridor") return std::make_unique<KeyCorridorEnv>();
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

EnvDefaults env_defaults(std::string_view name) {
  if (name == "point_target") return {7000.0, 1000.0};
  if (name == "key_corridor") return {KeyCorridorEnv::kPayoff, 1.0};
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

FeedforwardAgent::FeedforwardAgent(std::span<const double> params, const nn::PolicySpec& spec,
                                   const es::VbnStats* vbn)
    : mlp_(nn::unflatten_mlp(params, spec)), vbn_(vbn) {}

std::vector<double> FeedforwardAgent::act(std::span<const double> obs) {
  if (vbn_ == nullptr) return nn::mlp_forward(mlp_, obs);
  scratch_.resize(obs.size());
  es::vbn_normalize_into(*vbn_, obs, scratch_);
  return nn::mlp_forward(mlp_, scratch_);
}

DecisionTransformerAgent::DecisionTransformerAgent(std::span<const double> params, const nn::PolicySpec& spec,
                                                   const es::VbnStats* vbn)
    : view_(nn::unflatten_dt(params, spec)), vbn_(vbn), ctx_(spec.context_len, dt::RtgConfig{}) {}

void DecisionTransformerAgent::begin_episode(const dt::RtgConfig& rtg) {
  ctx_ = dt::init_context(rtg, view_.context_len);
}

std::vector<double> DecisionTransformerAgent::act(std::span<const double> obs) {
  return dt::act(view_, ctx_, obs, vbn_);
}

void DecisionTransformerAgent::observe(std::span<const double> obs, std::span<const double> action, double reward) {
  ctx_.record_step(obs, action, reward);
}

std::vector<double> ProportionalController::act(std::span<const double> obs) {
  std::vector<double> a(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) a[i] = -obs[i];
  clip_unit_norm(a);
  return a;
}

void SignalFollower::begin_episode(const dt::RtgConfig&) {
  cue_ = 0.0;
  seen_ = false;
}

std::vector<double> SignalFollower::act(std::span<const double> obs) {
  if (!seen_) {
    cue_ = obs[1];
    seen_ = true;
  }
  return {cue_};
}

std::unique_ptr<Agent> make_policy_agent(std::span<const double> params, const nn::PolicySpec& spec,
                                         const es::VbnStats* vbn) {
  if (spec.kind == nn::PolicyKind::kFeedforward) return std::make_unique<FeedforwardAgent>(params, spec, vbn);
  return std::make_unique<DecisionTransformerAgent>(params, spec, vbn);
}

std::unique_ptr<Agent> make_scripted_agent(std::string_view env_name) {
  if (env_name == "point_target") return std::make_unique<ProportionalController>();
  if (env_name == "key_corridor") return std::make_unique<SignalFollower>();
  throw ConfigError("no scripted teacher for environment '" + std::string(env_name) + "'");
}

bool RolloutResult::operator==(const RolloutResult& o) const {
  if (total_return != o.total_return || steps != o.steps || trajectory.size() != o.trajectory.size()) return false;
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const auto& a = trajectory[i];
    const auto& b = o.trajectory[i];
    if (a.obs != b.obs || a.action != b.action || a.reward != b.reward) return false;
  }
  return true;
}

RolloutResult rollout(Agent& agent, Env& env, std::uint64_t seed, const dt::RtgConfig& rtg, bool capture) {
  RolloutResult result;
  std::vector<double> obs = env.reset(seed);
  agent.begin_episode(rtg);
  while (true) {
    std::vector<double> action = agent.act(obs);
    EnvStep s = env.step(action);
    agent.observe(obs, action, s.reward);
    result.total_return += s.reward;
    ++result.steps;
    if (capture) result.trajectory.push_back({obs, action, s.reward});
    if (s.done) break;
    obs = std::move(s.obs);
  }
  return result;
}

double evaluate(Agent& agent, Env& env, std::span<const std::uint64_t> seeds, const dt::RtgConfig& rtg) {
  if (seeds.empty()) throw ContractError("evaluate needs at least one seed");
  double total = 0.0;
  for (auto s : seeds) total += rollout(agent, env, s, rtg).total_return;
  return total / static_cast<double>(seeds.size());
}

}  // namespace evodt::envs
