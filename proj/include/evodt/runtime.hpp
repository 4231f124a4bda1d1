#pragma once

// Master/worker execution of ES generations. Only seeds, offsets and
// scalars travel; every node applies the same update to its own replica and
// the theta digest catches divergence.

#include <cstddef>
#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "evodt/es.hpp"
#include "evodt/objective.hpp"
#include "evodt/transport.hpp"
#include "evodt/wire.hpp"

namespace evodt::dist {

// Fault injection for tests.
struct WorkerOptions {
  std::size_t drop_tasks = 0;                         // silently ignore the first n tasks
  std::optional<std::uint64_t> corrupt_at_iteration;  // nudge theta after applying that update
  Millis poll{200};
};

struct WorkerStats {
  std::size_t tasks = 0;
  std::size_t updates = 0;
  std::size_t resyncs = 0;
};

class Worker {
 public:
  /// Without an initial state the worker resyncs on its first task.
  Worker(std::uint32_t id, WorkerLink& link, es::EsHyper hyper, es::NoiseTable table,
         std::unique_ptr<Objective> objective, std::optional<es::EsState> state, WorkerOptions options = {});

  /// Serves tasks until Shutdown. Throws TransportError if the master vanishes.
  void run();

  const std::optional<es::EsState>& state() const { return state_; }
  const WorkerStats& stats() const { return stats_; }

 private:
  void handle_task(const wire::TaskMessage& task);
  void handle_update(const wire::UpdateMessage& update);
  bool resync();  // false when shut down while waiting

  std::uint32_t id_;
  WorkerLink& link_;
  es::EsHyper hyper_;
  es::NoiseTable table_;
  std::unique_ptr<Objective> objective_;
  std::optional<es::EsState> state_;
  bool in_sync_ = false;
  WorkerOptions options_;
  WorkerStats stats_;
  bool shutdown_ = false;
};

struct MasterOptions {
  std::size_t population = 2;
  std::size_t episodes_per_eval = 1;
  std::size_t obs_dim = 0;  // VBN batch width; 0 when no statistics are collected
  Millis timeout{600000};
  FitnessMode fitness = FitnessMode::kMeanReturn;
  double rtg_alpha = 0.5;
  double rtg_sigma = 0.0;
  double initial_desired_return = 0.0;
};

struct GenerationSummary {
  std::uint64_t iteration = 0;  // the generation that just completed
  double mean_fitness = 0.0;
  double best_fitness = 0.0;
  double mean_return = 0.0;
  double best_return = 0.0;
  std::uint64_t bytes_sent = 0;  // Task + Result + Update frames
  std::uint64_t resync_bytes = 0;
  std::size_t redispatched = 0;
  std::vector<double> fitness;  // entry order
};

class Master {
 public:
  Master(MasterLink& link, es::EsState state, es::EsHyper hyper, es::NoiseTable table, MasterOptions options);

  /// Throws WorkerFailure when a slice is still missing after one re-dispatch.
  GenerationSummary run_generation();

  /// Broadcasts Shutdown. Safe to call twice.
  void shutdown();

  const es::EsState& state() const { return state_; }
  const MasterOptions& options() const { return options_; }

 private:
  std::vector<double> desired_returns();

  MasterLink& link_;
  es::EsState state_;
  es::EsHyper hyper_;
  es::NoiseTable table_;
  MasterOptions options_;
  double prev_best_return_;
  double prev_mean_return_;
  bool shut_down_ = false;
};

/// [first, first + count) slices of size ceil(population / workers); trailing
/// workers may get an empty slice.
std::vector<std::pair<std::size_t, std::size_t>> partition(std::size_t population, std::size_t workers);

// Workers on threads connected through in-process links.
class InProcCluster {
 public:
  InProcCluster(std::size_t n_workers, const es::EsHyper& hyper, const es::NoiseTable& table,
                const ObjectiveFactory& make_objective, const es::EsState& initial,
                std::vector<WorkerOptions> options = {});
  ~InProcCluster();
  InProcCluster(const InProcCluster&) = delete;
  InProcCluster& operator=(const InProcCluster&) = delete;

  MasterLink& link() { return *links_.master; }
  const Worker& worker(std::size_t i) const { return *workers_.at(i); }

  /// Joins the worker threads and rethrows the first worker error.
  void join();

 private:
  InProcLinks links_;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::vector<std::thread> threads_;
  std::vector<std::exception_ptr> errors_;
};

}  // namespace evodt::dist
