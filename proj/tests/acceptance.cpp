// Acceptance checks. One [PASS]/[FAIL] line per criterion; the exit status is
// non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evodt/checkpoint.hpp"
#include "evodt/config.hpp"
#include "evodt/envs.hpp"
#include "evodt/es.hpp"
#include "evodt/nn.hpp"
#include "evodt/objective.hpp"
#include "evodt/runtime.hpp"
#include "evodt/trainer.hpp"
#include "evodt/vbn.hpp"
#include "evodt/wire.hpp"
#include "support.hpp"

using namespace evodt;

namespace {

// Pinned tolerances and budgets.
constexpr double kSphereRadius = 0.1;
constexpr std::size_t kSphereIterations = 300;
constexpr double kSphereSeconds = 30.0;
constexpr double kMinCosine = 0.9;
constexpr double kTeacherFraction = 0.9;  // eval >= teacher - 0.1 |teacher|
constexpr std::size_t kPointIterations = 500;
constexpr std::size_t kPointKeepTraining = 300;
constexpr double kCorridorTarget = 8.0;
constexpr double kCorridorChance = 1.0;
constexpr std::size_t kCorridorIterations = 200;
constexpr std::size_t kPopulationSeeds = 5;
constexpr std::size_t kFullPopulationMinSuccesses = 4;
constexpr double kMaxRtgSpread = 0.10;
constexpr std::size_t kSweepEpisodes = 100;
constexpr std::size_t kBrokenWithin = 5;
constexpr double kStayWithin = 0.10;
constexpr double kMaxBytesRatio = 0.01;
constexpr double kVbnMergeTolerance = 1e-9;
constexpr std::size_t kRoundTrips = 1000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double x, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << x;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::filesystem::path work_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("evodt_acceptance_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. Sphere sanity

struct SphereRun {
  double distance = 0.0;
  std::size_t reached = 0;  // 0 when never inside the radius
  double seconds = 0.0;
};

SphereRun sphere_run(double learning_rate) {
  const std::size_t dim = 20, population = 100;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> target(dim);
  for (double& t : target) t = u(rng);
  auto distance = [&](std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) s += (x[i] - target[i]) * (x[i] - target[i]);
    return std::sqrt(s);
  };

  const auto table = es::NoiseTable::create(5, 1 << 20);
  es::EsHyper hyper;
  hyper.optimizer.learning_rate = learning_rate;
  hyper.weight_decay_factor = 1.0;  // plain ES; decay would bias the optimum toward zero
  es::EsState state;
  state.theta = nn::FlatParams(dim);
  state.sigma = 0.02;
  state.optimizer = es::make_optimizer_state(es::OptimizerKind::kSgdMomentum, dim);
  state.rng_seed = 17;

  SphereRun run;
  const auto start = Clock::now();
  for (std::size_t it = 0; it < kSphereIterations; ++it) {
    const auto offsets = es::sample_offsets(state.rng_seed, state.iteration, population, table, dim);
    std::vector<double> fitness;
    fitness.reserve(population);
    for (const auto& p : offsets) {
      const auto x = es::perturb(state.theta.view(), table, p.offset, p.sign, state.sigma);
      const double d = distance(x.view());
      fitness.push_back(-d * d);
    }
    const auto w = es::centered_ranks(fitness);
    std::vector<es::WeightedPerturbation> entries;
    for (std::size_t i = 0; i < population; ++i) entries.push_back({offsets[i].offset, offsets[i].sign, w[i]});
    es::apply_update(state, hyper, table, entries, es::VbnStats{});
    if (distance(state.theta.view()) < kSphereRadius) {
      run.reached = it + 1;
      break;
    }
  }
  run.seconds = seconds_since(start);
  run.distance = distance(state.theta.view());
  return run;
}

Outcome sphere_sanity() {
  auto describe = [](const SphereRun& r) {
    return "|theta - theta*| = " + fmt(r.distance) +
           (r.reached ? " after " + std::to_string(r.reached) + " iterations" : " after 300 iterations (not reached)") +
           ", " + fmt(r.seconds, 3) + " s";
  };
  const auto run = sphere_run(0.05);
  // For reference only: the same step expressed without the 1/sigma factor.
  const auto coupled = sphere_run(0.05 * 0.02);
  return {run.reached > 0 && run.seconds < kSphereSeconds,
          "lr 0.05: " + describe(run) + "; reference lr 0.05 * sigma = 0.001: " + describe(coupled)};
}

// ---------------------------------------------------------------------------
// 2. Gradient estimate vs analytic gradient

Outcome gradient_oracle() {
  const std::size_t dim = 10, n = 10'000;
  const double sigma = 0.02;
  const auto table = es::NoiseTable::create(91, 1 << 20);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> d;
  std::vector<double> theta(dim), target(dim), scale(dim);
  for (auto& x : theta) x = d(rng);
  for (auto& x : target) x = d(rng);
  for (auto& s : scale) s = 0.5 + std::abs(d(rng));  // a general diagonal quadratic
  auto f = [&](std::span<const double> x) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s -= scale[k] * (x[k] - target[k]) * (x[k] - target[k]);
    return s;
  };
  const auto offs = es::sample_offsets(3, 0, n, table, dim);
  std::vector<double> fit(n);
  for (std::size_t i = 0; i < n; ++i) fit[i] = f(es::perturb(theta, table, offs[i].offset, offs[i].sign, sigma).view());
  const auto g = es::gradient_estimate(es::centered_ranks(fit), offs, table, sigma, dim);
  double dot = 0.0, ng = 0.0, na = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    const double analytic = -2.0 * scale[k] * (theta[k] - target[k]);
    dot += g[k] * analytic;
    ng += g[k] * g[k];
    na += analytic * analytic;
  }
  const double cosine = dot / std::sqrt(ng * na);
  return {cosine > kMinCosine, "cosine " + fmt(cosine) + " at population 10000"};
}

// ---------------------------------------------------------------------------
// 3-5. Training runs

config::RunConfig point_config(std::uint64_t seed) {
  auto cfg = config::parse_config(
      "env = point_target\n"
      "size_of_population = 500\n"
      "batch_size = 100\n"
      "noise_deviation = 0.02\n"
      "learning_rate = 0.003\n");
  cfg.num_of_iterations = kPointIterations;
  cfg.master_seed = seed;
  config::validate(cfg);
  return cfg;
}

config::RunConfig corridor_config(nn::PolicyKind policy) {
  auto cfg = config::parse_config(
      "env = key_corridor\n"
      "size_of_population = 500\n"
      "batch_size = 100\n"
      "episodes_per_eval = 2\n"
      "noise_deviation = 0.05\n"
      "learning_rate = 0.01\n");
  cfg.policy = policy;
  cfg.num_of_iterations = kCorridorIterations;
  config::validate(cfg);
  return cfg;
}

double teacher_return(const config::RunConfig& cfg) {
  auto env = envs::make_env(cfg.env);
  auto teacher = envs::make_scripted_agent(cfg.env);
  return envs::evaluate(*teacher, *env, train::eval_seeds(cfg.eval_episodes), config::rtg_config(cfg));
}

double zero_policy_return(const config::RunConfig& cfg) {
  const auto spec = config::policy_spec(cfg);
  es::EsState s;
  s.theta = nn::FlatParams(nn::param_count(spec));
  return train::evaluate_state(cfg, s);
}

double threshold_for(double teacher) { return teacher - (1.0 - kTeacherFraction) * std::abs(teacher); }

struct PointRun {
  std::optional<std::size_t> first_success;  // iterations needed
  double best_eval = -1e300;
  es::EsState best_state;
  nn::PolicySpec spec;
  double seconds = 0.0;
};

// Stops at the threshold unless keep_until says to continue.
PointRun train_point(const config::RunConfig& cfg, double threshold, std::size_t keep_until) {
  PointRun run;
  train::TrainOptions opt;
  opt.on_iteration = [&](const train::IterationRecord& rec, const es::EsState& st) {
    if (rec.eval_return > run.best_eval) {
      run.best_eval = rec.eval_return;
      run.best_state = st;
    }
    if (!run.first_success && rec.eval_return >= threshold) run.first_success = rec.iteration + 1;
    return !(run.first_success && rec.iteration + 1 >= keep_until);
  };
  const auto start = Clock::now();
  const auto result = train::run_training(cfg, opt);
  run.seconds = seconds_since(start);
  run.spec = result.spec;
  return run;
}

struct Shared {
  std::optional<PointRun> point;
  double point_teacher = 0.0;
  double point_zero = 0.0;
};

Shared& shared() {
  static Shared s;
  return s;
}

const PointRun& criterion3_point_run() {
  auto& s = shared();
  if (!s.point) {
    const auto cfg = point_config(0);
    s.point_teacher = teacher_return(cfg);
    s.point_zero = zero_policy_return(cfg);
    s.point = train_point(cfg, threshold_for(s.point_teacher), kPointKeepTraining);
  }
  return *s.point;
}

Outcome dt_trainability() {
  const auto& pt = criterion3_point_run();
  const auto& s = shared();
  const double threshold = threshold_for(s.point_teacher);
  const double normalized = (pt.best_eval - s.point_zero) / (s.point_teacher - s.point_zero);
  const bool point_ok = pt.first_success.has_value() && *pt.first_success <= kPointIterations;

  auto corridor = [](nn::PolicyKind kind, bool stop_at_target) {
    auto cfg = corridor_config(kind);
    double best = -1e300, last = 0.0;
    train::TrainOptions opt;
    opt.on_iteration = [&](const train::IterationRecord& rec, const es::EsState&) {
      best = std::max(best, rec.eval_return);
      last = rec.eval_return;
      return !(stop_at_target && rec.eval_return >= kCorridorTarget);
    };
    const auto r = train::run_training(cfg, opt);
    return std::make_tuple(best, last, r.records.size());
  };
  const auto [dt_best, dt_last, dt_iters] = corridor(nn::PolicyKind::kDecisionTransformer, true);
  const auto [ff_best, ff_last, ff_iters] = corridor(nn::PolicyKind::kFeedforward, false);
  (void)dt_best;
  (void)ff_last;
  const bool dt_ok = dt_last >= kCorridorTarget;
  const bool ff_ok = ff_best <= kCorridorChance;

  std::string detail = "point_target: " + std::to_string(nn::param_count(pt.spec)) + "-param DT eval " +
                       fmt(pt.best_eval) + " vs teacher " + fmt(s.point_teacher) + " (threshold " + fmt(threshold) +
                       ", normalized " + fmt(normalized, 3) + ")";
  detail += pt.first_success ? ", reached at iteration " + std::to_string(*pt.first_success) : ", never reached";
  detail += "; key_corridor: DT " + fmt(dt_last) + " after " + std::to_string(dt_iters) + " iterations, feedforward best " +
            fmt(ff_best) + " over " + std::to_string(ff_iters);
  return {point_ok && dt_ok && ff_ok, detail};
}

Outcome population_effect() {
  const auto base = point_config(0);
  const double threshold = threshold_for(teacher_return(base));
  std::size_t full_ok = 0, half_ok = 0;
  std::string iters_full, iters_half;
  for (std::size_t seed = 1; seed <= kPopulationSeeds; ++seed) {
    auto full = point_config(seed);
    auto half = full;
    config::scale_population(half, 0.5);
    const auto rf = train_point(full, threshold, 0);
    const auto rh = train_point(half, threshold, 0);
    full_ok += rf.first_success.has_value();
    half_ok += rh.first_success.has_value();
    iters_full += (rf.first_success ? std::to_string(*rf.first_success) : "-") + " ";
    iters_half += (rh.first_success ? std::to_string(*rh.first_success) : "-") + " ";
  }
  iters_full.pop_back();
  iters_half.pop_back();
  return {full_ok >= kFullPopulationMinSuccesses,
          "success within " + std::to_string(kPointIterations) + " iterations: population 500 " + std::to_string(full_ok) +
              "/5 [iterations " + iters_full + "], population 250 " + std::to_string(half_ok) + "/5 [iterations " +
              iters_half + "]"};
}

Outcome rtg_insensitivity() {
  const auto& pt = criterion3_point_run();
  checkpoint::Checkpoint ckpt{pt.spec, pt.best_state, 0};
  const auto rows = train::rtg_sweep(ckpt, "point_target", 1000.0, train::kDefaultSweepRtgs,
                                     train::eval_seeds(kSweepEpisodes), true);
  std::vector<double> medians;
  std::string detail = "medians";
  for (const auto& r : rows) {
    medians.push_back(r.returns.median);
    detail += " " + fmt(r.rtg, 7) + ":" + fmt(r.returns.median);
  }
  const double lo = *std::min_element(medians.begin(), medians.end());
  const double hi = *std::max_element(medians.begin(), medians.end());
  const double centre = std::abs(train::quartiles(medians).median);
  const double spread = (hi - lo) / centre;
  return {spread < kMaxRtgSpread, detail + "; relative spread " + fmt(spread, 3)};
}

// ---------------------------------------------------------------------------
// 6. Pretraining then RL at two step sizes

Outcome pretrain_breaking() {
  const auto dir = work_dir("pretrain");
  auto base = config::parse_config(
      "env = point_target\n"
      "size_of_population = 200\n"
      "batch_size = 100\n"
      "noise_deviation = 0.02\n"
      "learning_rate = 0.003\n"
      "num_of_iterations = 200\n");
  const auto pre_cfg = train::pretrain_config(base);
  const auto pre = train::run_training(pre_cfg);
  const auto ckpt_path = dir / "pretrained.ckpt";
  checkpoint::save({pre.spec, pre.final_state, config::config_digest(pre_cfg)}, ckpt_path);

  auto arm = [&](double step) {
    auto cfg = train::rl_after_pretrain_config(base, ckpt_path);
    cfg.learning_rate = step;
    cfg.noise_deviation = step;
    cfg.size_of_population = 2000;
    cfg.batch_size = 1000;
    cfg.num_of_iterations = 10;
    config::validate(cfg);
    return train::run_training(cfg);
  };
  const auto big = arm(0.05);
  const auto small = arm(0.01);
  const double level = big.initial_eval;
  auto evals = [](const train::TrainResult& r) {
    std::vector<double> v;
    for (const auto& rec : r.records) v.push_back(rec.eval_return);
    return v;
  };
  const auto eb = evals(big), es_ = evals(small);

  const double big_min = *std::min_element(eb.begin(), eb.begin() + kBrokenWithin);
  const bool big_broken = big_min < level;
  const double floor = level - kStayWithin * std::abs(level);
  const double small_min = *std::min_element(es_.begin(), es_.begin() + kBrokenWithin);
  const bool small_stays = small_min >= floor;
  const double small_later = *std::max_element(es_.begin() + kBrokenWithin, es_.end());
  const bool small_improves = small_later > level;

  auto series = [](const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += fmt(x, 3) + " ";
    s.pop_back();
    return s;
  };
  return {big_broken && small_stays && small_improves,
          "checkpoint " + fmt(level) + " (floor " + fmt(floor) + "); lr=sigma=0.05: [" + series(eb) +
              "]; lr=sigma=0.01: [" + series(es_) + "]; broken(0.05)=" + (big_broken ? "yes" : "no") +
              ", stays(0.01)=" + (small_stays ? "yes" : "no") + ", improves(0.01)=" + (small_improves ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 7. In-process vs TCP

Outcome transport_equivalence() {
  const auto dir = work_dir("transport");
  auto cfg = config::parse_config(
      "env = point_target\n"
      "size_of_population = 40\n"
      "batch_size = 40\n"
      "num_of_iterations = 4\n"
      "update_vbn_stats_probability = 0.25\n"
      "eval_episodes = 3\n"
      "master_seed = 99\n");
  auto inproc = cfg;
  inproc.workers = 1;
  inproc.checkpoint_dir = (dir / "inproc").string();
  auto tcp = cfg;
  tcp.workers = 4;
  tcp.transport = config::Transport::kTcp;
  tcp.listen_addr = "127.0.0.1:0";
  tcp.checkpoint_dir = (dir / "tcp").string();
  train::run_training(inproc);
  train::TrainOptions opt;
  opt.spawn_local_workers = true;
  train::run_training(tcp, opt);

  const auto a = slurp(dir / "inproc" / "latest.ckpt");
  const auto b = slurp(dir / "tcp" / "latest.ckpt");
  const auto ab = slurp(dir / "inproc" / "best.ckpt");
  const auto bb = slurp(dir / "tcp" / "best.ckpt");
  const auto vbn = checkpoint::deserialize(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(a.data()), a.size())).state.vbn.count;
  return {!a.empty() && a == b && ab == bb,
          std::to_string(a.size()) + "-byte checkpoints " + (a == b ? "identical" : "differ") +
              " (1 in-process worker vs 4 TCP workers, 4 iterations, " + std::to_string(vbn) + " VBN observations)"};
}

// ---------------------------------------------------------------------------
// 8. Traffic independent of model size

Outcome seed_only_traffic() {
  const auto table = es::NoiseTable::create(4, std::size_t{1} << 20);
  auto per_generation = [&](std::size_t dim) {
    es::EsHyper hyper;
    es::EsState init;
    init.theta = nn::FlatParams(std::vector<double>(dim, 0.01));
    init.optimizer = es::make_optimizer_state(es::OptimizerKind::kSgdMomentum, dim);
    init.rng_seed = 3;
    dist::ObjectiveFactory factory = [] {
      return std::make_unique<dist::FunctionObjective>([](std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s -= v * v;
        return s;
      });
    };
    dist::InProcCluster cluster(4, hyper, table, factory, init);
    dist::MasterOptions mo;
    mo.population = 100;
    dist::Master master(cluster.link(), init, hyper, table, mo);
    std::uint64_t total = 0;
    const int generations = 3;
    for (int g = 0; g < generations; ++g) total += master.run_generation().bytes_sent;
    master.shutdown();
    cluster.join();
    return static_cast<double>(total) / generations;
  };
  const double small = per_generation(1'000);
  const double large = per_generation(100'000);
  const double ratio = (large - small) / small;
  return {ratio < kMaxBytesRatio, fmt(small, 8) + " bytes/generation at 1e3 params, " + fmt(large, 8) +
                                      " at 1e5 (relative difference " + fmt(ratio, 3) + ")"};
}

// ---------------------------------------------------------------------------
// 9. Micro-oracles

Outcome micro_oracles() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  auto close = [](double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); };

  {  // Two-token causal attention by hand.
    const std::vector<double> ones{1.0, 1.0}, zeros2{0.0, 0.0}, zeros4{0.0, 0.0, 0.0, 0.0};
    const std::vector<double> wq{1.0, 0.5, -0.5, 2.0}, wk{0.0, 1.0, 1.0, 0.0}, wv{1.0, 2.0, 3.0, 4.0};
    const std::vector<double> bq{0.1, 0.0}, bk{0.0, -0.2}, bv{0.5, 0.0};
    nn::AttentionBlock block;
    block.attn_norm = {ones, zeros2};
    block.ffn_norm = {ones, zeros2};
    block.query = {wq, bq, 2, 2};
    block.key = {wk, bk, 2, 2};
    block.value = {wv, bv, 2, 2};
    block.proj = {zeros4, zeros2, 2, 2};
    block.n_heads = 1;
    nn::Matrix x(2, 2);
    x.data = {1.0, 0.0, 0.5, -1.0};
    const auto out = nn::causal_self_attention(block, x);
    auto affine = [](const std::vector<double>& w, const std::vector<double>& b, double x0, double x1) {
      return std::vector<double>{w[0] * x0 + w[1] * x1 + b[0], w[2] * x0 + w[3] * x1 + b[1]};
    };
    const auto q1 = affine(wq, bq, 0.5, -1.0);
    const auto k0 = affine(wk, bk, 1.0, 0.0), k1 = affine(wk, bk, 0.5, -1.0);
    const auto v0 = affine(wv, bv, 1.0, 0.0), v1 = affine(wv, bv, 0.5, -1.0);
    const double s0 = (q1[0] * k0[0] + q1[1] * k0[1]) / std::sqrt(2.0);
    const double s1 = (q1[0] * k1[0] + q1[1] * k1[1]) / std::sqrt(2.0);
    const double a0 = 1.0 / (1.0 + std::exp(s1 - s0));
    expect(close(out.at(0, 0), v0[0], 1e-12) && close(out.at(0, 1), v0[1], 1e-12), "attention row 0");
    expect(close(out.at(1, 0), a0 * v0[0] + (1 - a0) * v1[0], 1e-12) &&
               close(out.at(1, 1), a0 * v0[1] + (1 - a0) * v1[1], 1e-12),
           "attention row 1");
  }

  {  // Centered ranks.
    std::mt19937_64 rng(12);
    std::normal_distribution<double> d;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 2 + rng() % 200;
      std::vector<double> f(n);
      for (double& v : f) v = (trial % 3 == 0) ? std::round(d(rng)) : d(rng);  // ties on some trials
      const auto w = es::centered_ranks(f);
      const double sum = std::accumulate(w.begin(), w.end(), 0.0);
      expect(std::abs(sum) < 1e-9, "rank sum");
      expect(*std::min_element(w.begin(), w.end()) >= -0.5 && *std::max_element(w.begin(), w.end()) <= 0.5,
             "rank bounds");
      std::vector<double> g(n);
      for (std::size_t i = 0; i < n; ++i) g[i] = 3.0 * f[i] * f[i] * f[i] + 7.0;  // strictly increasing map
      expect(es::centered_ranks(g) == w, "rank equivariance");
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<double> pf(n);
      for (std::size_t i = 0; i < n; ++i) pf[i] = f[perm[i]];
      const auto pw = es::centered_ranks(pf);
      bool follows = true;
      for (std::size_t i = 0; i < n; ++i) follows = follows && pw[i] == w[perm[i]];
      expect(follows, "rank permutation");
    }
  }

  {  // Antithetic pairs with constant fitness cancel.
    const auto table = es::NoiseTable::create(2, 100'000);
    es::EsState st;
    st.theta = nn::FlatParams(std::vector<double>{0.5, -1.0, 2.0, 0.0});
    st.optimizer = es::make_optimizer_state(es::OptimizerKind::kAdam, 4);
    es::EsHyper hyper;
    hyper.optimizer.kind = es::OptimizerKind::kAdam;
    const auto offs = es::sample_offsets(9, 0, 50, table, 4);
    const auto w = es::centered_ranks(std::vector<double>(50, -3.0));
    std::vector<es::WeightedPerturbation> entries;
    for (std::size_t i = 0; i < offs.size(); ++i) entries.push_back({offs[i].offset, offs[i].sign, w[i]});
    es::apply_update(st, hyper, table, entries, es::VbnStats{});
    const std::vector<double> want{0.5 * 0.995, -1.0 * 0.995, 2.0 * 0.995, 0.0};
    expect(st.theta.values == want, "constant-fitness update");
  }

  {  // Decoupled decay vs an L2 term under Adam.
    es::OptimizerConfig cfg;
    cfg.kind = es::OptimizerKind::kAdam;
    const double factor = 0.99;
    const double lambda = (1.0 - factor) / cfg.learning_rate;
    std::vector<double> a{1.0, -2.0, 0.5}, b = a;
    auto sa = es::make_optimizer_state(es::OptimizerKind::kAdam, 3);
    auto sb = sa;
    const std::vector<double> grad{0.3, 0.001, -2.0};
    for (int step = 0; step < 3; ++step) {
      es::optimizer_step(sa, cfg, a, grad);
      es::decay_weights(a, factor);
      std::vector<double> g = grad;
      for (std::size_t i = 0; i < 3; ++i) g[i] -= lambda * b[i];
      es::optimizer_step(sb, cfg, b, g);
    }
    double diff = 0.0;
    for (std::size_t i = 0; i < 3; ++i) diff += std::abs(a[i] - b[i]);
    expect(diff > 1e-3, "decoupled decay equals L2 under Adam");
  }

  {  // VBN merge equals statistics of the concatenation.
    std::mt19937_64 rng(31);
    std::normal_distribution<double> d(5.0, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t dim = 1 + rng() % 4, na = 1 + rng() % 50, nb = 1 + rng() % 50;
      std::vector<double> xa(na * dim), xb(nb * dim);
      for (double& v : xa) v = d(rng);
      for (double& v : xb) v = d(rng);
      std::vector<double> all = xa;
      all.insert(all.end(), xb.begin(), xb.end());
      const auto merged = es::vbn_merge(es::vbn_from_batch(xa, dim), es::vbn_from_batch(xb, dim));
      // Two-pass reference.
      bool ok = merged.count == na + nb;
      for (std::size_t k = 0; k < dim; ++k) {
        double mean = 0.0;
        for (std::size_t r = 0; r < na + nb; ++r) mean += all[r * dim + k];
        mean /= static_cast<double>(na + nb);
        double m2 = 0.0;
        for (std::size_t r = 0; r < na + nb; ++r) m2 += (all[r * dim + k] - mean) * (all[r * dim + k] - mean);
        ok = ok && close(merged.mean[k], mean, kVbnMergeTolerance) && close(merged.m2[k], m2, kVbnMergeTolerance);
      }
      expect(ok, "vbn merge");
    }
  }

  std::set<std::string> unique(failed.begin(), failed.end());
  std::string detail = "attention, centered ranks, constant-fitness update, decoupled decay, vbn merge";
  if (!unique.empty()) {
    detail = "failed:";
    for (const auto& f : unique) detail += " [" + f + "]";
  }
  return {unique.empty(), detail};
}

// ---------------------------------------------------------------------------
// 10. Round trips

Outcome round_trips() {
  testing::Random rnd(20260101);
  std::size_t ckpt_ok = 0, msg_ok = 0;
  for (std::size_t i = 0; i < kRoundTrips; ++i) {
    const auto c = rnd.checkpoint();
    const auto bytes = checkpoint::serialize(c);
    const auto back = checkpoint::deserialize(bytes);
    ckpt_ok += checkpoint::serialize(back) == bytes && back.spec == c.spec && back.state == c.state &&
               back.config_digest == c.config_digest;
  }
  for (std::size_t i = 0; i < kRoundTrips; ++i) {
    const auto m = rnd.message(i);
    const auto frame = wire::encode(m);
    const auto back = wire::decode(frame);
    msg_ok += back == m && wire::encode(back) == frame;
  }
  return {ckpt_ok == kRoundTrips && msg_ok == kRoundTrips,
          "checkpoints " + std::to_string(ckpt_ok) + "/" + std::to_string(kRoundTrips) + ", messages " +
              std::to_string(msg_ok) + "/" + std::to_string(kRoundTrips) + " byte-identical"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run (default: all)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "sphere sanity", sphere_sanity},
      {2, "gradient estimate", gradient_oracle},
      {3, "decision transformer trainability", dt_trainability},
      {4, "population size", population_effect},
      {5, "rtg insensitivity", rtg_insensitivity},
      {6, "pretraining then RL", pretrain_breaking},
      {7, "transport determinism", transport_equivalence},
      {8, "seed-only traffic", seed_only_traffic},
      {9, "numeric micro-oracles", micro_oracles},
      {10, "round trips", round_trips},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << c.id << " " << c.name << ": " << o.detail << " ("
              << fmt(seconds_since(start), 3) << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
