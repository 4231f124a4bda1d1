#include "evodt/objective.hpp"

#include <cmath>

#include "evodt/errors.hpp"
#include "evodt/es.hpp"

namespace evodt::dist {

EnvObjective::EnvObjective(EnvObjectiveConfig cfg) : cfg_(std::move(cfg)), env_(envs::make_env(cfg_.env)) {
  cfg_.spec.validate();
  if (cfg_.spec.obs_dim != env_->obs_dim() || cfg_.spec.act_dim != env_->act_dim()) {
    throw ConfigError("policy dimensions do not match environment '" + cfg_.env + "'");
  }
}

Evaluation EnvObjective::evaluate(std::span<const double> params, const es::VbnStats& vbn, const EvalContext& ctx) {
  if (ctx.episodes == 0) throw ContractError("episodes per evaluation must be positive");
  const bool conditioned = cfg_.fitness == FitnessMode::kRtgConditioned;
  if (conditioned && ctx.desired_returns.size() != ctx.episodes) {
    throw ContractError("one desired return per episode is required");
  }
  auto agent = envs::make_policy_agent(params, cfg_.spec, cfg_.use_vbn ? &vbn : nullptr);
  const bool capture =
      cfg_.use_vbn && es::vbn_selected(ctx.rng_seed, ctx.iteration, ctx.entry_index, cfg_.vbn_probability);

  Evaluation out;
  std::vector<double> returns;
  returns.reserve(ctx.episodes);
  for (std::size_t k = 0; k < ctx.episodes; ++k) {
    dt::RtgConfig rtg = cfg_.rtg;
    if (conditioned) rtg.initial_target = ctx.desired_returns[k];
    const auto r = envs::rollout(*agent, *env_, es::episode_seed(ctx.rng_seed, ctx.iteration, ctx.entry_index / 2, k), rtg, capture);
    returns.push_back(r.total_return);
    out.steps += r.steps;
    for (const auto& tr : r.trajectory) out.vbn_batch.insert(out.vbn_batch.end(), tr.obs.begin(), tr.obs.end());
  }
  double sum = 0.0;
  for (double r : returns) sum += r;
  out.mean_return = sum / static_cast<double>(returns.size());
  out.fitness = conditioned ? es::rtg_fitness(returns, ctx.desired_returns) : out.mean_return;
  if (!std::isfinite(out.fitness)) throw ContractError("non-finite fitness");
  return out;
}

ImitationObjective::ImitationObjective(nn::PolicySpec spec, std::shared_ptr<const pretrain::TeacherDataset> data,
                                       bool use_vbn)
    : spec_(std::move(spec)), data_(std::move(data)), use_vbn_(use_vbn) {
  if (!data_ || data_->records.empty()) throw ConfigError("imitation objective needs a nonempty dataset");
}

Evaluation ImitationObjective::evaluate(std::span<const double> params, const es::VbnStats& vbn,
                                        const EvalContext&) {
  Evaluation out;
  out.fitness = pretrain::imitation_fitness(params, spec_, *data_, use_vbn_ ? &vbn : nullptr);
  out.mean_return = out.fitness;
  out.steps = data_->records.size();
  return out;
}

}  // namespace evodt::dist
