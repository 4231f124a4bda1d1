// evodt: train, pretrain, evaluate and inspect ES-trained policies.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evodt/checkpoint.hpp"
#include "evodt/config.hpp"
#include "evodt/errors.hpp"
#include "evodt/trainer.hpp"

namespace {

using namespace evodt;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitTransport = 3;
constexpr int kExitWorker = 4;

// Config file plus one flag per key; flags win.
struct ConfigFlags {
  std::string path;
  std::map<std::string, std::string> overrides;
  double population_scale = 1.0;
  bool no_vbn = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", path, "Config file (key = value lines)")->check(CLI::ExistingFile);
    for (const auto& key : config::key_names()) {
      std::string dashed = key;
      for (char& ch : dashed) {
        if (ch == '_') ch = '-';
      }
      std::string names = "--" + key;
      if (dashed != key) names += ",--" + dashed;
      app->add_option_function<std::string>(
          names, [this, key](const std::string& v) { overrides[key] = v; }, "Override config key " + key)
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
    app->add_option("--population-scale", population_scale, "Multiply size_of_population (ablation)");
    app->add_flag("--no-vbn", no_vbn, "Disable virtual batch normalization (ablation)");
  }

  config::RunConfig resolve() const {
    config::RunConfig cfg = path.empty() ? config::RunConfig{} : config::load_config(path);
    for (const auto& [k, v] : overrides) config::set_key(cfg, k, v);
    if (population_scale != 1.0) config::scale_population(cfg, population_scale);
    if (no_vbn) {
      cfg.use_vbn = false;
      cfg.update_vbn_stats_probability = 0.0;
    }
    config::validate(cfg);
    return cfg;
  }
};

void print_summary(const train::TrainResult& r) {
  std::cout << "iterations " << r.records.size() << "  initial eval " << r.initial_eval;
  if (!r.records.empty()) {
    std::cout << "  final eval " << r.records.back().eval_return << "  best " << r.records.back().best_so_far;
  }
  std::cout << "\n";
}

int cmd_train(const ConfigFlags& flags, bool spawn, bool quiet) {
  const auto cfg = flags.resolve();
  train::TrainOptions opt;
  opt.spawn_local_workers = spawn;
  if (!quiet) opt.progress = &std::cout;
  print_summary(train::run_training(cfg, opt));
  return kExitOk;
}

int cmd_pretrain(const ConfigFlags& flags, std::size_t rl_iterations, bool spawn, bool quiet) {
  auto base = flags.resolve();
  if (base.checkpoint_dir.empty()) throw ConfigError("pretrain needs checkpoint_dir");
  const std::filesystem::path dir(base.checkpoint_dir);
  const auto cfg = train::pretrain_config(base);
  train::TrainOptions opt;
  opt.spawn_local_workers = spawn;
  if (!quiet) opt.progress = &std::cout;
  const auto r = train::run_training(cfg, opt);
  const auto pre = dir / "pretrained.ckpt";
  checkpoint::save({r.spec, r.final_state, config::config_digest(cfg)}, pre);
  print_summary(r);
  std::cout << "pretrained checkpoint: " << pre.string() << "\n";
  if (rl_iterations > 0) {
    auto rl = train::rl_after_pretrain_config(base, pre);
    rl.num_of_iterations = rl_iterations;
    rl.checkpoint_dir = (dir / "rl").string();
    if (!rl.log_path.empty()) rl.log_path += ".rl";
    print_summary(train::run_training(rl, opt));
  }
  return kExitOk;
}

double median_of(std::vector<double> v) { return train::quartiles(std::move(v)).median; }

int cmd_eval(const std::string& ckpt_path, std::string env, std::size_t episodes, std::optional<double> rtg,
             std::optional<double> scale, bool no_vbn) {
  const auto ckpt = checkpoint::load(ckpt_path);
  const auto defaults = envs::env_defaults(env);
  const dt::RtgConfig cfg{rtg.value_or(defaults.rtg), scale.value_or(defaults.rtg_scale)};
  const auto seeds = train::eval_seeds(episodes);
  const auto returns = train::episode_returns(ckpt.spec, ckpt.state, env, cfg, !no_vbn, seeds);
  double sum = 0.0;
  for (double x : returns) sum += x;
  std::cout << std::setprecision(10) << "mean " << sum / static_cast<double>(returns.size()) << "\nmedian "
            << median_of(returns) << "\n";
  return kExitOk;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& env, std::size_t episodes, std::vector<double> rtgs,
              std::optional<double> scale, bool no_vbn) {
  const auto ckpt = checkpoint::load(ckpt_path);
  if (rtgs.empty()) rtgs = train::kDefaultSweepRtgs;
  const auto seeds = train::eval_seeds(episodes);
  const auto rows =
      train::rtg_sweep(ckpt, env, scale.value_or(envs::env_defaults(env).rtg_scale), rtgs, seeds, !no_vbn);
  std::cout << "rtg,q1,median,q3\n" << std::setprecision(10);
  for (const auto& r : rows) {
    std::cout << r.rtg << ',' << r.returns.q1 << ',' << r.returns.median << ',' << r.returns.q3 << "\n";
  }
  return kExitOk;
}

int cmd_export(const std::string& log, const std::string& out) {
  if (out.empty() || out == "-") {
    train::export_csv(log, std::cout);
  } else {
    std::ofstream f(out);
    if (!f) throw ConfigError("cannot write " + out);
    train::export_csv(log, f);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolution-strategy training of decision transformer policies"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  bool train_spawn = false;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Run ES training");
  train_flags.attach(train_cmd);
  train_cmd->add_flag("--spawn-workers", train_spawn, "With transport = tcp, start the workers locally");
  train_cmd->add_flag("-q,--quiet", quiet, "No per-iteration output");

  ConfigFlags pre_flags;
  bool pre_spawn = false;
  std::size_t rl_iterations = 0;
  auto* pre_cmd = app.add_subcommand("pretrain", "Behavior cloning by ES, optionally followed by RL");
  pre_flags.attach(pre_cmd);
  pre_cmd->add_option("--rl-iterations", rl_iterations, "RL iterations after pretraining (lr = sigma = 0.01)");
  pre_cmd->add_flag("--spawn-workers", pre_spawn, "With transport = tcp, start the workers locally");
  pre_cmd->add_flag("-q,--quiet", quiet, "No per-iteration output");

  std::string ckpt_path;
  std::string env = "point_target";
  std::size_t episodes = 20;
  std::optional<double> rtg;
  std::optional<double> scale;
  bool no_vbn = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--env", env, "Environment");
  eval_cmd->add_option("--episodes", episodes, "Held-out episodes");
  eval_cmd->add_option("--rtg", rtg, "Initial return-to-go (unscaled)");
  eval_cmd->add_option("--rtg-scale", scale, "Return-to-go scale");
  eval_cmd->add_flag("--no-vbn", no_vbn, "Ignore stored VBN statistics");

  std::vector<double> rtgs;
  auto* sweep_cmd = app.add_subcommand("rtg-sweep", "Return quartiles across initial returns-to-go");
  sweep_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--env", env, "Environment");
  sweep_cmd->add_option("--episodes", episodes, "Held-out episodes per rtg");
  sweep_cmd->add_option("--rtg", rtgs, "Return-to-go values (default -1000 0 7000 1000000)");
  sweep_cmd->add_option("--rtg-scale", scale, "Return-to-go scale");
  sweep_cmd->add_flag("--no-vbn", no_vbn, "Ignore stored VBN statistics");

  std::string log_path;
  std::string out_path;
  auto* export_cmd = app.add_subcommand("export", "Training log to CSV");
  export_cmd->add_option("--log", log_path, "JSONL training log")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("-o,--out", out_path, "CSV output (default stdout)");

  std::string master;
  std::uint32_t worker_id = 0;
  double connect_timeout = 30.0;
  auto* worker_cmd = app.add_subcommand("worker", "Join a TCP master");
  worker_cmd->add_option("--master", master, "host:port of the master")->required();
  worker_cmd->add_option("--id", worker_id, "Worker id (orders the slices)");
  worker_cmd->add_option("--connect-timeout", connect_timeout, "Seconds to keep retrying the connection");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train_flags, train_spawn, quiet);
    if (*pre_cmd) return cmd_pretrain(pre_flags, rl_iterations, pre_spawn, quiet);
    if (*eval_cmd) return cmd_eval(ckpt_path, env, episodes, rtg, scale, no_vbn);
    if (*sweep_cmd) return cmd_sweep(ckpt_path, env, episodes, rtgs, scale, no_vbn);
    if (*export_cmd) return cmd_export(log_path, out_path);
    if (*worker_cmd) {
      train::run_tcp_worker(dist::parse_endpoint(master), worker_id,
                            dist::Millis(static_cast<std::int64_t>(connect_timeout * 1000.0)));
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return kExitTransport;
  } catch (const WorkerFailure& e) {
    std::cerr << "worker failure: " << e.what() << "\n";
    return kExitWorker;
  } catch (const DecodeError& e) {
    std::cerr << "bad input file: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
