#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <random>

#include "evodt/decision_transformer.hpp"
#include "evodt/envs.hpp"
#include "evodt/errors.hpp"
#include "evodt/nn.hpp"
#include "evodt/pretrain.hpp"

using namespace evodt;

namespace {

pretrain::TeacherDataset point_data(std::vector<std::uint64_t> seeds) {
  envs::PointTargetEnv env;
  envs::ProportionalController teacher;
  return pretrain::collect_teacher_dataset(teacher, "proportional", env, seeds, 1000.0);
}

// Replaces every teacher action with what the feedforward policy does, plus an offset.
pretrain::TeacherDataset relabel(pretrain::TeacherDataset data, std::span<const double> params,
                                 const nn::PolicySpec& spec, double offset) {
  envs::FeedforwardAgent agent(params, spec);
  for (auto& r : data.records) {
    r.action = agent.act(r.obs);
    for (double& a : r.action) a += offset;
  }
  return data;
}

}  // namespace

TEST_CASE("one teacher episode gives one record per step") {
  const auto data = point_data({17});
  REQUIRE(data.records.size() == 50);
  CHECK(data.obs_dim == 2);
  CHECK(data.act_dim == 2);
  envs::PointTargetEnv env;
  envs::ProportionalController teacher;
  const auto r = envs::rollout(teacher, env, 17, {7000.0, 1000.0});
  CHECK(data.records.front().rtg == doctest::Approx(r.total_return / 1000.0).epsilon(1e-12));
  CHECK(data.records.back().rtg == doctest::Approx(data.records.back().reward / 1000.0).epsilon(1e-12));
  for (std::size_t i = 0; i < 50; ++i) CHECK(data.records[i].step == i);
  CHECK(point_data({17}) == data);
  CHECK_THROWS_AS(point_data({}), ContractError);
}

TEST_CASE("imitation fitness is the negative mean squared action error") {
  // One-dimensional actions so the offset error is exactly offset^2.
  envs::KeyCorridorEnv env;
  envs::SignalFollower teacher;
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  const auto raw = pretrain::collect_teacher_dataset(teacher, "signal", env, seeds, 1.0);
  const auto spec = nn::feedforward_spec(2, {4}, 1);
  const auto params = nn::init_params(spec, 4);
  CHECK(pretrain::imitation_fitness(params.view(), spec, relabel(raw, params.view(), spec, 0.0)) == 0.0);
  CHECK(pretrain::imitation_fitness(params.view(), spec, relabel(raw, params.view(), spec, 0.5)) ==
        doctest::Approx(-0.25).epsilon(1e-12));

  // Two action dimensions each off by 0.5.
  const auto pt_spec = nn::feedforward_spec(2, {3}, 2);
  const auto pt_params = nn::init_params(pt_spec, 5);
  CHECK(pretrain::imitation_fitness(pt_params.view(), pt_spec, relabel(point_data({1, 2}), pt_params.view(), pt_spec, 0.5)) ==
        doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("transformer imitation replays the teacher's history") {
  const auto data = point_data({3, 8});
  const auto spec = nn::decision_transformer_spec(2, 2, 8, 1, 2, 4, 64);
  const auto params = nn::init_params(spec, 6);

  double sum = 0.0;
  dt::EpisodeContext ctx = dt::init_context({0.0, 1.0}, 4);
  std::uint32_t episode = ~0u;
  for (const auto& r : data.records) {
    if (r.episode != episode) {
      episode = r.episode;
      ctx = dt::init_context({r.rtg * data.rtg_scale, data.rtg_scale}, spec.context_len);
    }
    const auto a = dt::act(params.view(), spec, ctx, r.obs);
    for (std::size_t k = 0; k < a.size(); ++k) sum += (a[k] - r.action[k]) * (a[k] - r.action[k]);
    ctx.record_step(r.obs, r.action, r.reward);
  }
  const double expected = -sum / static_cast<double>(data.records.size());
  CHECK(pretrain::imitation_fitness(params.view(), spec, data) == doctest::Approx(expected).epsilon(1e-12));

  auto shuffled = data;
  std::mt19937_64 rng(2);
  std::shuffle(shuffled.records.begin(), shuffled.records.end(), rng);
  CHECK(pretrain::imitation_fitness(params.view(), spec, shuffled) == pretrain::imitation_fitness(params.view(), spec, data));
}

TEST_CASE("dataset observation statistics") {
  const auto data = point_data({1, 2, 3});
  const auto stats = pretrain::dataset_obs_stats(data);
  CHECK(stats.count == data.records.size());
  double mean0 = 0.0;
  for (const auto& r : data.records) mean0 += r.obs[0];
  mean0 /= static_cast<double>(data.records.size());
  CHECK(stats.mean[0] == doctest::Approx(mean0).epsilon(1e-12));
}

TEST_CASE("datasets survive a save and load") {
  const auto data = point_data({5, 6});
  const auto path = std::filesystem::temp_directory_path() / "evodt_test_pretrain.dat";
  pretrain::save_dataset(data, path);
  CHECK(pretrain::load_dataset(path) == data);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(pretrain::load_dataset(path), ConfigError);
}
