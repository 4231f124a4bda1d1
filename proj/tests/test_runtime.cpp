#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "evodt/errors.hpp"
#include "evodt/es.hpp"
#include "evodt/objective.hpp"
#include "evodt/runtime.hpp"

using namespace evodt;

namespace {

double sphere(std::span<const double> x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - 0.5 * static_cast<double>(i % 3);
    s -= d * d;
  }
  return s;
}

dist::ObjectiveFactory sphere_factory() {
  return [] { return std::make_unique<dist::FunctionObjective>(sphere); };
}

es::EsState initial_state(std::size_t dim, std::uint64_t seed) {
  es::EsState s;
  s.theta = nn::FlatParams(std::vector<double>(dim, 0.1));
  s.sigma = 0.05;
  s.optimizer = es::make_optimizer_state(es::OptimizerKind::kSgdMomentum, dim);
  s.rng_seed = seed;
  return s;
}

const es::NoiseTable& table() {
  static const es::NoiseTable t = es::NoiseTable::create(11, 1 << 16);
  return t;
}

// The same generation computed without any messaging.
void sequential_generation(es::EsState& s, const es::EsHyper& hyper, std::size_t population) {
  const auto offsets = es::sample_offsets(s.rng_seed, s.iteration, population, table(), s.theta.size());
  std::vector<double> fitness;
  for (const auto& p : offsets) fitness.push_back(sphere(es::perturb(s.theta.view(), table(), p.offset, p.sign, s.sigma).view()));
  const auto w = es::centered_ranks(fitness);
  std::vector<es::WeightedPerturbation> entries;
  for (std::size_t i = 0; i < offsets.size(); ++i) entries.push_back({offsets[i].offset, offsets[i].sign, w[i]});
  es::apply_update(s, hyper, table(), entries, es::VbnStats{});
}

struct Run {
  es::EsState master;
  std::vector<es::EsState> workers;
  std::vector<dist::WorkerStats> stats;
  std::vector<dist::GenerationSummary> summaries;
};

Run run_cluster(std::size_t n_workers, std::size_t population, std::size_t generations,
                std::vector<dist::WorkerOptions> options = {}, dist::Millis timeout = dist::Millis(600000)) {
  const es::EsHyper hyper;
  const auto init = initial_state(10, 42);
  dist::InProcCluster cluster(n_workers, hyper, table(), sphere_factory(), init, options);
  dist::MasterOptions mo;
  mo.population = population;
  mo.timeout = timeout;
  dist::Master master(cluster.link(), init, hyper, table(), mo);
  Run run;
  try {
    for (std::size_t g = 0; g < generations; ++g) run.summaries.push_back(master.run_generation());
  } catch (...) {
    master.shutdown();
    cluster.join();
    throw;
  }
  master.shutdown();
  cluster.join();
  run.master = master.state();
  for (std::size_t i = 0; i < n_workers; ++i) {
    run.workers.push_back(*cluster.worker(i).state());
    run.stats.push_back(cluster.worker(i).stats());
  }
  return run;
}

}  // namespace

TEST_CASE("partition covers the population exactly once") {
  for (std::size_t pop : {2u, 4u, 10u, 100u, 1000u}) {
    for (std::size_t w : {1u, 2u, 3u, 4u, 7u, 16u}) {
      const auto parts = dist::partition(pop, w);
      REQUIRE(parts.size() == w);
      std::size_t next = 0;
      for (const auto& [first, count] : parts) {
        if (count == 0) continue;
        CHECK(first == next);
        next += count;
      }
      CHECK(next == pop);
    }
  }
}

TEST_CASE("one worker, two members: matches the sequential computation") {
  const auto run = run_cluster(1, 2, 3);
  auto oracle = initial_state(10, 42);
  for (int g = 0; g < 3; ++g) sequential_generation(oracle, es::EsHyper{}, 2);
  CHECK(run.master == oracle);
  CHECK(run.workers[0] == oracle);
  CHECK(run.summaries[0].fitness.size() == 2);
}

TEST_CASE("worker count does not change the result") {
  const auto one = run_cluster(1, 20, 4);
  const auto four = run_cluster(4, 20, 4);
  const auto three = run_cluster(3, 20, 4);
  CHECK(one.master == four.master);
  CHECK(one.master == three.master);
  for (const auto& w : four.workers) CHECK(w == four.master);
  for (std::size_t g = 0; g < 4; ++g) CHECK(one.summaries[g].fitness == four.summaries[g].fitness);
}

TEST_CASE("constant fitness leaves only weight decay") {
  const es::EsHyper hyper;
  const auto init = initial_state(6, 5);
  dist::InProcCluster cluster(
      2, hyper, table(), [] { return std::make_unique<dist::FunctionObjective>([](std::span<const double>) { return 3.0; }); },
      init);
  dist::MasterOptions mo;
  mo.population = 4;
  dist::Master master(cluster.link(), init, hyper, table(), mo);
  master.run_generation();
  master.shutdown();
  cluster.join();
  for (std::size_t i = 0; i < 6; ++i) CHECK(master.state().theta.values[i] == init.theta.values[i] * hyper.weight_decay_factor);
  CHECK(master.state().iteration == 1);
}

TEST_CASE("a diverged worker resyncs and catches up") {
  std::vector<dist::WorkerOptions> opts(2);
  opts[1].corrupt_at_iteration = 1;
  const auto run = run_cluster(2, 8, 5, opts);
  const auto clean = run_cluster(2, 8, 5);
  CHECK(run.master == clean.master);
  CHECK(run.workers[1] == run.master);
  CHECK(run.stats[1].resyncs >= 1);
  CHECK(run.stats[0].resyncs == 0);
  std::uint64_t resync_bytes = 0;
  for (const auto& s : run.summaries) resync_bytes += s.resync_bytes;
  CHECK(resync_bytes > 0);
}

TEST_CASE("a lost task is re-dispatched once") {
  std::vector<dist::WorkerOptions> opts(2);
  opts[0].drop_tasks = 1;
  const auto run = run_cluster(2, 8, 2, opts, dist::Millis(300));
  CHECK(run.summaries[0].redispatched == 1);
  CHECK(run.summaries[1].redispatched == 0);
  CHECK(run.master == run_cluster(2, 8, 2).master);
}

TEST_CASE("a worker that stays silent is a failure") {
  std::vector<dist::WorkerOptions> opts(2);
  opts[1].drop_tasks = 2;
  CHECK_THROWS_AS(run_cluster(2, 8, 1, opts, dist::Millis(200)), WorkerFailure);
}

TEST_CASE("update traffic does not depend on the parameter count") {
  auto bytes = [](std::size_t dim) {
    const es::EsHyper hyper;
    const auto init = initial_state(dim, 9);
    dist::InProcCluster cluster(2, hyper, table(), sphere_factory(), init);
    dist::MasterOptions mo;
    mo.population = 20;
    dist::Master master(cluster.link(), init, hyper, table(), mo);
    const auto s = master.run_generation();
    master.shutdown();
    cluster.join();
    return s.bytes_sent;
  };
  CHECK(bytes(10) == bytes(5000));
}

TEST_CASE("shutdown is idempotent and a finished master refuses work") {
  const es::EsHyper hyper;
  const auto init = initial_state(4, 1);
  dist::InProcCluster cluster(2, hyper, table(), sphere_factory(), init);
  dist::MasterOptions mo;
  mo.population = 4;
  dist::Master master(cluster.link(), init, hyper, table(), mo);
  master.shutdown();
  master.shutdown();
  cluster.join();
  CHECK_THROWS_AS(master.run_generation(), ContractError);
}
