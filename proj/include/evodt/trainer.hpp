#pragma once

// Training, evaluation and reporting on top of the runtime.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evodt/checkpoint.hpp"
#include "evodt/config.hpp"
#include "evodt/es.hpp"
#include "evodt/objective.hpp"
#include "evodt/pretrain.hpp"
#include "evodt/transport.hpp"

namespace evodt::train {

inline constexpr std::uint64_t kEvalSeedBase = 1'000'000'000;
inline constexpr std::uint64_t kTeacherSeedBase = 2'000'000'000;

struct IterationRecord {
  std::uint64_t iteration = 0;
  double eval_return = 0.0;
  double best_so_far = 0.0;
  double mean_pop_fitness = 0.0;
  double wall_clock_s = 0.0;
  std::uint64_t bytes_sent = 0;
};

struct TrainOptions {
  bool spawn_local_workers = false;  // tcp transport: run the workers on local threads
  std::ostream* progress = nullptr;
  /// Called after every iteration; returning false stops the run early.
  std::function<bool(const IterationRecord&, const es::EsState&)> on_iteration;
};

struct TrainResult {
  nn::PolicySpec spec;
  es::EsState initial_state;
  es::EsState final_state;
  es::EsState best_state;
  double initial_eval = 0.0;
  std::vector<IterationRecord> records;
};

std::vector<std::uint64_t> eval_seeds(std::size_t n, std::uint64_t base = kEvalSeedBase);

es::NoiseTable make_noise_table(const config::RunConfig& cfg);

/// Fresh initialization, or the weights and VBN statistics of init_checkpoint
/// with a fresh optimizer.
es::EsState initial_state(const config::RunConfig& cfg);

/// Teacher trajectories for imitation runs (dataset_path if set).
std::shared_ptr<const pretrain::TeacherDataset> teacher_dataset(const config::RunConfig& cfg);

dist::ObjectiveFactory objective_factory(const config::RunConfig& cfg,
                                         std::shared_ptr<const pretrain::TeacherDataset> data = nullptr);

/// Per-episode returns of theta (unperturbed) on the given seeds.
std::vector<double> episode_returns(const nn::PolicySpec& spec, const es::EsState& state, const std::string& env,
                                    const dt::RtgConfig& rtg, bool use_vbn, std::span<const std::uint64_t> seeds);

double evaluate_state(const config::RunConfig& cfg, const es::EsState& state);

/// Runs num_of_iterations generations. Writes the JSONL log and checkpoints
/// when log_path / checkpoint_dir are set.
TrainResult run_training(const config::RunConfig& cfg, const TrainOptions& options = {});

/// Imitation phase: objective = imitation, VBN statistics frozen at the
/// teacher data's observation statistics.
config::RunConfig pretrain_config(config::RunConfig cfg);

/// RL phase after pretraining: reward objective from `checkpoint` with
/// learning_rate = noise_deviation = 0.01 and frozen VBN statistics.
config::RunConfig rl_after_pretrain_config(config::RunConfig cfg, const std::filesystem::path& checkpoint);

/// Joins a TCP master and serves until shutdown.
void run_tcp_worker(const dist::Endpoint& master, std::uint32_t worker_id, dist::Millis connect_timeout);

struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

/// Linear interpolation between order statistics. Throws on empty input.
Quartiles quartiles(std::vector<double> values);

struct SweepRow {
  double rtg = 0.0;
  Quartiles returns;
};

inline const std::vector<double> kDefaultSweepRtgs = {-1000.0, 0.0, 7000.0, 1'000'000.0};

/// Throws ConfigError for non-DT checkpoints.
std::vector<SweepRow> rtg_sweep(const checkpoint::Checkpoint& ckpt, const std::string& env, double rtg_scale,
                                std::span<const double> rtgs, std::span<const std::uint64_t> seeds, bool use_vbn);

/// Reads a JSONL training log and writes iteration,best_so_far,eval_return,wall_clock_s.
std::size_t export_csv(const std::filesystem::path& log, std::ostream& out);

std::string record_json(const IterationRecord& r);

}  // namespace evodt::train
