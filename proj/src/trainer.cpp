#include "evodt/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "evodt/envs.hpp"
#include "evodt/errors.hpp"
#include "evodt/runtime.hpp"

namespace evodt::train {

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(double x) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  return std::string(buf, p);
}

dist::Millis timeout_of(const config::RunConfig& cfg) {
  return dist::Millis(static_cast<std::int64_t>(cfg.worker_timeout_s * 1000.0));
}

}  // namespace

std::vector<std::uint64_t> eval_seeds(std::size_t n, std::uint64_t base) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = base + i;
  return s;
}

es::NoiseTable make_noise_table(const config::RunConfig& cfg) {
  return es::NoiseTable::create(config::noise_seed(cfg), cfg.noise_table_size,
                                nn::param_count(config::policy_spec(cfg)));
}

es::EsState initial_state(const config::RunConfig& cfg) {
  const auto spec = config::policy_spec(cfg);
  es::EsState s;
  if (!cfg.init_checkpoint.empty()) {
    const auto ck = checkpoint::load(cfg.init_checkpoint);
    if (!(ck.spec == spec)) throw ConfigError("init_checkpoint was trained with a different policy spec");
    s.theta = ck.state.theta;
    s.vbn = ck.state.vbn;
  } else {
    s.theta = nn::init_params(spec, config::init_seed(cfg));
    if (cfg.use_vbn) s.vbn = es::VbnStats(spec.obs_dim);
  }
  s.sigma = cfg.noise_deviation;
  s.optimizer = es::make_optimizer_state(cfg.optimizer, s.theta.size());
  s.iteration = 0;
  s.rng_seed = config::sampling_seed(cfg);
  return s;
}

std::shared_ptr<const pretrain::TeacherDataset> teacher_dataset(const config::RunConfig& cfg) {
  if (!cfg.dataset_path.empty()) {
    return std::make_shared<const pretrain::TeacherDataset>(pretrain::load_dataset(cfg.dataset_path));
  }
  auto env = envs::make_env(cfg.env);
  auto teacher = envs::make_scripted_agent(cfg.env);
  const auto seeds = eval_seeds(cfg.pretrain_episodes, kTeacherSeedBase);
  return std::make_shared<const pretrain::TeacherDataset>(pretrain::collect_teacher_dataset(
      *teacher, cfg.env == "point_target" ? "proportional_controller" : "signal_follower", *env, seeds,
      config::resolved_rtg_scale(cfg)));
}

dist::ObjectiveFactory objective_factory(const config::RunConfig& cfg,
                                         std::shared_ptr<const pretrain::TeacherDataset> data) {
  if (cfg.objective == config::ObjectiveKind::kImitation) {
    if (!data) data = teacher_dataset(cfg);
    const auto spec = config::policy_spec(cfg);
    const bool use_vbn = cfg.use_vbn;
    return [spec, data, use_vbn] { return std::make_unique<dist::ImitationObjective>(spec, data, use_vbn); };
  }
  const auto oc = config::env_objective(cfg);
  return [oc] { return std::make_unique<dist::EnvObjective>(oc); };
}

std::vector<double> episode_returns(const nn::PolicySpec& spec, const es::EsState& state, const std::string& env_name,
                                    const dt::RtgConfig& rtg, bool use_vbn, std::span<const std::uint64_t> seeds) {
  auto env = envs::make_env(env_name);
  auto agent = envs::make_policy_agent(state.theta.values, spec, use_vbn ? &state.vbn : nullptr);
  std::vector<double> out;
  out.reserve(seeds.size());
  for (auto s : seeds) out.push_back(envs::rollout(*agent, *env, s, rtg).total_return);
  return out;
}

double evaluate_state(const config::RunConfig& cfg, const es::EsState& state) {
  const auto seeds = eval_seeds(cfg.eval_episodes);
  const auto r =
      episode_returns(config::policy_spec(cfg), state, cfg.env, config::rtg_config(cfg), cfg.use_vbn, seeds);
  double sum = 0.0;
  for (double x : r) sum += x;
  return sum / static_cast<double>(r.size());
}

std::string record_json(const IterationRecord& r) {
  nlohmann::ordered_json j;
  j["iteration"] = r.iteration;
  j["eval_return"] = r.eval_return;
  j["best_so_far"] = r.best_so_far;
  j["mean_pop_fitness"] = r.mean_pop_fitness;
  j["wall_clock_s"] = r.wall_clock_s;
  j["bytes_sent"] = r.bytes_sent;
  return j.dump();
}

TrainResult run_training(const config::RunConfig& cfg, const TrainOptions& options) {
  config::validate(cfg);
  const auto start = Clock::now();
  TrainResult result;
  result.spec = config::policy_spec(cfg);
  const auto table = make_noise_table(cfg);
  const auto hyper = config::es_hyper(cfg);
  es::EsState state = initial_state(cfg);

  std::shared_ptr<const pretrain::TeacherDataset> data;
  if (cfg.objective == config::ObjectiveKind::kImitation) {
    data = teacher_dataset(cfg);
    if (cfg.use_vbn && state.vbn.count == 0) state.vbn = pretrain::dataset_obs_stats(*data);
  }
  result.initial_state = state;
  result.initial_eval = evaluate_state(cfg, state);
  const auto factory = objective_factory(cfg, data);

  dist::MasterOptions mo;
  mo.population = cfg.size_of_population;
  mo.episodes_per_eval = cfg.episodes_per_eval;
  mo.obs_dim = result.spec.obs_dim;
  mo.timeout = timeout_of(cfg);
  mo.fitness = cfg.fitness;
  mo.rtg_alpha = cfg.rtg_alpha;
  mo.rtg_sigma = cfg.rtg_sigma;
  mo.initial_desired_return = config::resolved_rtg(cfg);

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    const std::filesystem::path p(cfg.log_path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    log.open(p, std::ios::trunc);
    if (!log) throw ConfigError("cannot write log " + cfg.log_path);
    nlohmann::ordered_json header;
    header["config"] = nlohmann::ordered_json::parse(config::resolved_json(cfg));
    header["config_digest"] = config::config_digest(cfg);
    log << header.dump() << "\n" << std::flush;
  }

  const std::uint64_t digest = config::config_digest(cfg);
  const std::filesystem::path dir(cfg.checkpoint_dir);
  auto save = [&](const es::EsState& s, const char* name) {
    if (!cfg.checkpoint_dir.empty()) checkpoint::save({result.spec, s, digest}, dir / name);
  };
  save(state, "latest.ckpt");
  save(state, "best.ckpt");

  // Transport. Declaration order matters: links close before spawned
  // worker threads are joined, which unblocks them.
  std::vector<std::thread> spawned;
  struct Joiner {
    std::vector<std::thread>& threads;
    ~Joiner() {
      for (auto& t : threads) {
        if (t.joinable()) t.join();
      }
    }
  } joiner{spawned};
  std::unique_ptr<dist::InProcCluster> cluster;
  std::unique_ptr<dist::MasterLink> tcp_link;
  dist::MasterLink* link = nullptr;
  if (cfg.transport == config::Transport::kInProc) {
    cluster = std::make_unique<dist::InProcCluster>(cfg.workers, hyper, table, factory, state);
    link = &cluster->link();
  } else {
    dist::TcpListener listener(dist::parse_endpoint(cfg.listen_addr));
    if (options.spawn_local_workers) {
      const dist::Endpoint ep{"127.0.0.1", listener.port()};
      for (std::size_t i = 0; i < cfg.workers; ++i) {
        spawned.emplace_back([ep, i] {
          try {
            run_tcp_worker(ep, static_cast<std::uint32_t>(i), dist::Millis(30000));
          } catch (const std::exception&) {
            // The master reports the missing worker.
          }
        });
      }
    }
    if (options.progress != nullptr) {
      *options.progress << "listening on port " << listener.port() << " for " << cfg.workers << " worker(s)" << std::endl;
    }
    tcp_link = listener.accept_workers(cfg.workers, config::resolved_text(cfg), timeout_of(cfg));
    link = tcp_link.get();
  }

  dist::Master master(*link, state, hyper, table, mo);
  double best = -std::numeric_limits<double>::infinity();
  double best_saved = result.initial_eval;
  result.best_state = state;
  try {
    for (std::size_t it = 0; it < cfg.num_of_iterations; ++it) {
      const auto summary = master.run_generation();
      IterationRecord rec;
      rec.iteration = summary.iteration;
      rec.eval_return = evaluate_state(cfg, master.state());
      best = std::max(best, rec.eval_return);
      rec.best_so_far = best;
      rec.mean_pop_fitness = summary.mean_fitness;
      rec.bytes_sent = summary.bytes_sent;
      rec.wall_clock_s = std::chrono::duration<double>(Clock::now() - start).count();
      result.records.push_back(rec);
      if (log.is_open()) log << record_json(rec) << "\n" << std::flush;
      save(master.state(), "latest.ckpt");
      if (rec.eval_return > best_saved) {
        best_saved = rec.eval_return;
        result.best_state = master.state();
        save(master.state(), "best.ckpt");
      }
      if (options.progress != nullptr) {
        *options.progress << "iter " << rec.iteration << "  eval " << fmt(rec.eval_return) << "  best "
                          << fmt(rec.best_so_far) << "  pop " << fmt(rec.mean_pop_fitness) << "\n";
      }
      if (options.on_iteration && !options.on_iteration(rec, master.state())) break;
    }
  } catch (...) {
    master.shutdown();
    throw;
  }
  master.shutdown();
  result.final_state = master.state();
  return result;
}

config::RunConfig pretrain_config(config::RunConfig cfg) {
  cfg.objective = config::ObjectiveKind::kImitation;
  cfg.fitness = dist::FitnessMode::kMeanReturn;
  cfg.update_vbn_stats_probability = 0.0;
  return cfg;
}

config::RunConfig rl_after_pretrain_config(config::RunConfig cfg, const std::filesystem::path& checkpoint) {
  cfg.objective = config::ObjectiveKind::kReward;
  cfg.init_checkpoint = checkpoint.string();
  cfg.learning_rate = 0.01;
  cfg.noise_deviation = 0.01;
  cfg.update_vbn_stats_probability = 0.0;
  return cfg;
}

void run_tcp_worker(const dist::Endpoint& master, std::uint32_t worker_id, dist::Millis connect_timeout) {
  auto conn = dist::tcp_connect(master, worker_id, connect_timeout);
  const auto cfg = config::parse_config(conn.config_text);
  config::validate(cfg);
  const auto table = make_noise_table(cfg);
  const auto factory = objective_factory(cfg);
  dist::Worker worker(worker_id, *conn.link, config::es_hyper(cfg), table, factory(), std::nullopt);
  worker.run();
}

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw ContractError("quartiles of an empty sample");
  std::sort(values.begin(), values.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
  };
  return {at(0.25), at(0.5), at(0.75)};
}

std::vector<SweepRow> rtg_sweep(const checkpoint::Checkpoint& ckpt, const std::string& env, double rtg_scale,
                                std::span<const double> rtgs, std::span<const std::uint64_t> seeds, bool use_vbn) {
  if (ckpt.spec.kind != nn::PolicyKind::kDecisionTransformer) {
    throw ConfigError("rtg-sweep needs a decision transformer checkpoint");
  }
  if (seeds.empty()) throw ConfigError("rtg-sweep needs at least one seed");
  std::vector<SweepRow> rows;
  for (double r : rtgs) {
    rows.push_back({r, quartiles(episode_returns(ckpt.spec, ckpt.state, env, {r, rtg_scale}, use_vbn, seeds))});
  }
  return rows;
}

std::size_t export_csv(const std::filesystem::path& log, std::ostream& out) {
  std::ifstream in(log);
  if (!in) throw ConfigError("cannot read log " + log.string());
  out << "iteration,best_so_far,eval_return,wall_clock_s\n";
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed log line: " + std::string(e.what()));
    }
    if (j.contains("config")) continue;
    out << j.at("iteration").get<std::uint64_t>() << ',' << fmt(j.at("best_so_far").get<double>()) << ','
        << fmt(j.at("eval_return").get<double>()) << ',' << fmt(j.at("wall_clock_s").get<double>()) << '\n';
    ++rows;
  }
  return rows;
}

}  // namespace evodt::train
