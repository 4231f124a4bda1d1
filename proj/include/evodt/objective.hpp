#pragma once

// What a worker computes for one perturbed parameter vector.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "evodt/decision_transformer.hpp"
#include "evodt/envs.hpp"
#include "evodt/nn.hpp"
#include "evodt/pretrain.hpp"
#include "evodt/vbn.hpp"

namespace evodt::dist {

struct EvalContext {
  std::uint64_t rng_seed = 0;
  std::uint64_t iteration = 0;
  std::size_t entry_index = 0;  // position in the generation's offset list
  std::size_t episodes = 1;
  std::span<const double> desired_returns;  // unscaled; empty for plain return fitness
};

struct Evaluation {
  double fitness = 0.0;
  double mean_return = 0.0;
  std::uint64_t steps = 0;
  std::vector<double> vbn_batch;
};

// Evaluate is called from one thread per instance; make one per worker.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual Evaluation evaluate(std::span<const double> params, const es::VbnStats& vbn, const EvalContext& ctx) = 0;
};

using ObjectiveFactory = std::function<std::unique_ptr<Objective>()>;

enum class FitnessMode { kMeanReturn, kRtgConditioned };

struct EnvObjectiveConfig {
  std::string env = "point_target";
  nn::PolicySpec spec;
  dt::RtgConfig rtg;
  FitnessMode fitness = FitnessMode::kMeanReturn;
  bool use_vbn = true;
  double vbn_probability = 0.0;
};

// Fitness from episodes in an environment. Episode k of entry i uses
// es::episode_seed(rng_seed, iteration, i / 2, k).
class EnvObjective final : public Objective {
 public:
  explicit EnvObjective(EnvObjectiveConfig cfg);

  Evaluation evaluate(std::span<const double> params, const es::VbnStats& vbn, const EvalContext& ctx) override;

 private:
  EnvObjectiveConfig cfg_;
  std::unique_ptr<envs::Env> env_;
};

class ImitationObjective final : public Objective {
 public:
  ImitationObjective(nn::PolicySpec spec, std::shared_ptr<const pretrain::TeacherDataset> data, bool use_vbn);

  Evaluation evaluate(std::span<const double> params, const es::VbnStats& vbn, const EvalContext& ctx) override;

 private:
  nn::PolicySpec spec_;
  std::shared_ptr<const pretrain::TeacherDataset> data_;
  bool use_vbn_;
};

// Closed-form fitness on the raw vector (sanity runs, tests).
class FunctionObjective final : public Objective {
 public:
  explicit FunctionObjective(std::function<double(std::span<const double>)> f) : f_(std::move(f)) {}

  Evaluation evaluate(std::span<const double> params, const es::VbnStats&, const EvalContext&) override {
    const double v = f_(params);
    return {v, v, 0, {}};
  }

 private:
  std::function<double(std::span<const double>)> f_;
};

}  // namespace evodt::dist
