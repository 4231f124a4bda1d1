#include "evodt/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <string>

#include "evodt/errors.hpp"

namespace evodt::dist {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t theta_digest(const es::EsState& s) { return es::digest(s.theta.values); }

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> partition(std::size_t population, std::size_t workers) {
  if (workers == 0) throw ContractError("at least one worker is required");
  const std::size_t slice = (population + workers - 1) / workers;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t first = std::min(population, w * slice);
    const std::size_t last = std::min(population, first + slice);
    out.emplace_back(first, last - first);
  }
  return out;
}

Worker::Worker(std::uint32_t id, WorkerLink& link, es::EsHyper hyper, es::NoiseTable table,
               std::unique_ptr<Objective> objective, std::optional<es::EsState> state, WorkerOptions options)
    : id_(id),
      link_(link),
      hyper_(hyper),
      table_(std::move(table)),
      objective_(std::move(objective)),
      state_(std::move(state)),
      in_sync_(state_.has_value()),
      options_(options) {}

void Worker::run() {
  while (!shutdown_) {
    auto frame = link_.receive(options_.poll);
    if (!frame) continue;
    const auto msg = wire::decode(*frame);
    if (std::holds_alternative<wire::Shutdown>(msg)) return;
    if (const auto* task = std::get_if<wire::TaskMessage>(&msg)) {
      handle_task(*task);
    } else if (const auto* update = std::get_if<wire::UpdateMessage>(&msg)) {
      handle_update(*update);
    } else if (const auto* resync = std::get_if<wire::ResyncMessage>(&msg)) {
      state_ = resync->state;
      in_sync_ = true;
    }
  }
}

bool Worker::resync() {
  link_.send(wire::encode(wire::ResyncRequest{id_}));
  while (true) {
    auto frame = link_.receive(options_.poll);
    if (!frame) continue;
    auto msg = wire::decode(*frame);
    if (std::holds_alternative<wire::Shutdown>(msg)) {
      shutdown_ = true;
      return false;
    }
    if (auto* r = std::get_if<wire::ResyncMessage>(&msg)) {
      state_ = std::move(r->state);
      in_sync_ = true;
      ++stats_.resyncs;
      return true;
    }
    // Anything else predates the resync and is superseded by it.
  }
}

void Worker::handle_task(const wire::TaskMessage& task) {
  if (options_.drop_tasks > 0) {
    --options_.drop_tasks;
    return;
  }
  if (state_ && in_sync_ && task.iteration < state_->iteration) return;  // stale re-dispatch
  if (!state_ || !in_sync_ || state_->iteration != task.iteration || theta_digest(*state_) != task.theta_version) {
    if (!resync()) return;
    if (state_->iteration != task.iteration || theta_digest(*state_) != task.theta_version) {
      throw WorkerFailure("worker " + std::to_string(id_) + " still diverged after resync");
    }
  }
  ++stats_.tasks;
  const es::EsState& s = *state_;
  const auto offsets = es::sample_offsets(task.rng_seed, task.iteration, task.population, table_, s.theta.size());
  if (static_cast<std::size_t>(task.first_index) + task.count > offsets.size()) {
    throw ContractError("task slice exceeds the population");
  }
  wire::ResultMessage result;
  result.worker_id = id_;
  result.iteration = task.iteration;
  result.first_index = task.first_index;
  result.entries.reserve(task.count);
  std::vector<double> params(s.theta.size());
  for (std::size_t i = task.first_index; i < task.first_index + task.count; ++i) {
    const auto& p = offsets[i];
    es::perturb_into(s.theta.values, table_, p.offset, p.sign, task.sigma, params);
    EvalContext ctx;
    ctx.rng_seed = task.rng_seed;
    ctx.iteration = task.iteration;
    ctx.entry_index = i;
    ctx.episodes = task.episodes_per_eval;
    ctx.desired_returns = task.desired_returns;
    Evaluation ev = objective_->evaluate(params, s.vbn, ctx);
    result.entries.push_back({p.offset, p.sign, ev.fitness, ev.mean_return, ev.steps, std::move(ev.vbn_batch)});
  }
  link_.send(wire::encode(result));
}

void Worker::handle_update(const wire::UpdateMessage& update) {
  if (!state_ || !in_sync_ || state_->iteration != update.iteration) {
    in_sync_ = false;
    return;
  }
  es::apply_update(*state_, hyper_, table_, update.entries, update.vbn_delta);
  ++stats_.updates;
  if (options_.corrupt_at_iteration && *options_.corrupt_at_iteration == update.iteration &&
      !state_->theta.values.empty()) {
    state_->theta.values[0] += 1.0;
  }
  if (theta_digest(*state_) != update.theta_version) in_sync_ = false;
}

Master::Master(MasterLink& link, es::EsState state, es::EsHyper hyper, es::NoiseTable table, MasterOptions options)
    : link_(link),
      state_(std::move(state)),
      hyper_(hyper),
      table_(std::move(table)),
      options_(options),
      prev_best_return_(options.initial_desired_return),
      prev_mean_return_(options.initial_desired_return) {
  if (options_.population == 0 || options_.population % 2 != 0) {
    throw ConfigError("population must be even and positive");
  }
  if (options_.episodes_per_eval == 0) throw ConfigError("episodes_per_eval must be positive");
  if (link_.worker_count() == 0) throw ConfigError("at least one worker is required");
}

std::vector<double> Master::desired_returns() {
  if (options_.fitness != FitnessMode::kRtgConditioned) return {};
  std::mt19937_64 rng(es::mix_seed(state_.rng_seed ^ 0xD351EDull, state_.iteration));
  std::vector<double> out(options_.episodes_per_eval);
  for (double& d : out) {
    d = es::sample_desired_return(prev_best_return_, prev_mean_return_, options_.rtg_alpha, options_.rtg_sigma, rng);
  }
  return out;
}

GenerationSummary Master::run_generation() {
  if (shut_down_) throw ContractError("master already shut down");
  const std::size_t n = options_.population;
  const auto offsets = es::sample_offsets(state_.rng_seed, state_.iteration, n, table_, state_.theta.size());
  const auto slices = partition(n, link_.worker_count());

  GenerationSummary summary;
  summary.iteration = state_.iteration;

  wire::TaskMessage task;
  task.iteration = state_.iteration;
  task.rng_seed = state_.rng_seed;
  task.sigma = state_.sigma;
  task.episodes_per_eval = static_cast<std::uint32_t>(options_.episodes_per_eval);
  task.population = static_cast<std::uint32_t>(n);
  task.theta_version = theta_digest(state_);
  task.desired_returns = desired_returns();

  auto send_task = [&](std::size_t w) {
    task.first_index = static_cast<std::uint32_t>(slices[w].first);
    task.count = static_cast<std::uint32_t>(slices[w].second);
    const Bytes frame = wire::encode(task);
    summary.bytes_sent += frame.size();
    try {
      link_.send(w, frame);
    } catch (const TransportError&) {
      // A dead worker is a missing slice, handled by re-dispatch.
    }
  };

  std::vector<std::optional<wire::ResultMessage>> results(slices.size());
  std::size_t missing = 0;
  for (std::size_t w = 0; w < slices.size(); ++w) {
    if (slices[w].second == 0) continue;
    send_task(w);
    ++missing;
  }

  bool retried = false;
  auto deadline = Clock::now() + options_.timeout;
  while (missing > 0) {
    const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now());
    auto in = left.count() > 0 ? link_.receive(left) : std::nullopt;
    if (!in) {
      if (retried) {
        throw WorkerFailure(std::to_string(missing) + " worker slice(s) missing after re-dispatch in generation " +
                            std::to_string(state_.iteration));
      }
      retried = true;
      for (std::size_t w = 0; w < slices.size(); ++w) {
        if (slices[w].second == 0 || results[w]) continue;
        send_task(w);
        ++summary.redispatched;
      }
      deadline = Clock::now() + options_.timeout;
      continue;
    }
    const auto msg = wire::decode(in->frame);
    if (const auto* req = std::get_if<wire::ResyncRequest>(&msg)) {
      (void)req;
      const Bytes frame = wire::encode(wire::ResyncMessage{state_});
      summary.resync_bytes += frame.size();
      link_.send(in->worker, frame);
      continue;
    }
    const auto* res = std::get_if<wire::ResultMessage>(&msg);
    if (res == nullptr || res->iteration != state_.iteration) continue;  // late duplicate
    summary.bytes_sent += in->frame.size();
    const std::size_t w = in->worker;
    if (w >= slices.size() || results[w]) continue;
    if (res->first_index != slices[w].first || res->entries.size() != slices[w].second) {
      throw WorkerFailure("worker " + std::to_string(w) + " returned a result for the wrong slice");
    }
    for (std::size_t j = 0; j < res->entries.size(); ++j) {
      const auto& e = res->entries[j];
      const auto& p = offsets[slices[w].first + j];
      if (e.offset != p.offset || e.sign != p.sign) {
        throw WorkerFailure("worker " + std::to_string(w) + " evaluated an unexpected perturbation");
      }
    }
    results[w] = *res;
    --missing;
  }

  // Reduce in canonical entry order, independent of arrival order and worker count.
  std::vector<double> fitness;
  std::vector<double> returns;
  std::vector<double> vbn_batch;
  fitness.reserve(n);
  returns.reserve(n);
  for (const auto& r : results) {
    if (!r) continue;
    for (const auto& e : r->entries) {
      fitness.push_back(e.fitness);
      returns.push_back(e.mean_return);
      vbn_batch.insert(vbn_batch.end(), e.vbn_batch.begin(), e.vbn_batch.end());
    }
  }
  const auto weights = es::centered_ranks(fitness);
  std::vector<es::WeightedPerturbation> weighted(n);
  for (std::size_t i = 0; i < n; ++i) weighted[i] = {offsets[i].offset, offsets[i].sign, weights[i]};
  es::VbnStats delta;
  if (!vbn_batch.empty()) {
    if (options_.obs_dim == 0 || vbn_batch.size() % options_.obs_dim != 0) {
      throw ContractError("VBN batch does not match the observation width");
    }
    delta = es::vbn_from_batch(vbn_batch, options_.obs_dim);
  }

  wire::UpdateMessage update;
  update.iteration = state_.iteration;
  es::apply_update(state_, hyper_, table_, weighted, delta);
  update.entries = std::move(weighted);
  update.theta_version = theta_digest(state_);
  update.vbn_delta = std::move(delta);
  const Bytes frame = wire::encode(update);
  for (std::size_t w = 0; w < link_.worker_count(); ++w) {
    summary.bytes_sent += frame.size();
    try {
      link_.send(w, frame);
    } catch (const TransportError&) {
      // Noticed when its next slice goes missing.
    }
  }

  double fsum = 0.0;
  double rsum = 0.0;
  for (double f : fitness) fsum += f;
  for (double r : returns) rsum += r;
  summary.mean_fitness = fsum / static_cast<double>(n);
  summary.best_fitness = *std::max_element(fitness.begin(), fitness.end());
  summary.mean_return = rsum / static_cast<double>(n);
  summary.best_return = *std::max_element(returns.begin(), returns.end());
  summary.fitness = std::move(fitness);
  prev_best_return_ = summary.best_return;
  prev_mean_return_ = summary.mean_return;
  return summary;
}

void Master::shutdown() {
  if (shut_down_) return;
  shut_down_ = true;
  const Bytes frame = wire::encode(wire::Shutdown{});
  for (std::size_t w = 0; w < link_.worker_count(); ++w) {
    try {
      link_.send(w, frame);
    } catch (const TransportError&) {
      // Already gone.
    }
  }
}

InProcCluster::InProcCluster(std::size_t n_workers, const es::EsHyper& hyper, const es::NoiseTable& table,
                             const ObjectiveFactory& make_objective, const es::EsState& initial,
                             std::vector<WorkerOptions> options)
    : links_(make_inproc_links(n_workers)), errors_(n_workers) {
  options.resize(n_workers);
  for (std::size_t i = 0; i < n_workers; ++i) {
    workers_.push_back(std::make_unique<Worker>(static_cast<std::uint32_t>(i), *links_.workers[i], hyper, table,
                                                make_objective(), initial, options[i]));
  }
  for (std::size_t i = 0; i < n_workers; ++i) {
    threads_.emplace_back([this, i] {
      try {
        workers_[i]->run();
      } catch (const TransportError&) {
        // Master side closed.
      } catch (...) {
        errors_[i] = std::current_exception();
      }
    });
  }
}

void InProcCluster::join() {
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  for (auto& e : errors_) {
    if (e) std::rethrow_exception(std::exchange(e, nullptr));
  }
}

InProcCluster::~InProcCluster() {
  const Bytes frame = wire::encode(wire::Shutdown{});
  for (std::size_t w = 0; w < links_.master->worker_count(); ++w) links_.master->send(w, frame);
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
}

}  // namespace evodt::dist
