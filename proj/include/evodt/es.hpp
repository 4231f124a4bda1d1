#pragma once

// OpenAI-style evolution strategy: shared noise table, mirrored perturbations,
// centered-rank shaping, natural-gradient estimate (divided by sigma),
// optimizer step followed by decoupled weight decay.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "evodt/nn.hpp"
#include "evodt/vbn.hpp"

namespace evodt::es {

// Immutable pool of standard-normal samples; copies share storage.
class NoiseTable {
 public:
  /// Throws ContractError if length < min_length.
  static NoiseTable create(std::uint64_t seed, std::size_t length, std::size_t min_length = 1);
  static NoiseTable from_values(std::vector<float> values);

  std::size_t size() const { return values_ ? values_->size() : 0; }
  std::uint64_t seed() const { return seed_; }

  /// Throws ContractError when offset + dim exceeds the table.
  std::span<const float> slice(std::uint64_t offset, std::size_t dim) const;
  std::span<const float> values() const { return *values_; }

 private:
  std::shared_ptr<const std::vector<float>> values_;
  std::uint64_t seed_ = 0;
};

struct Perturbation {
  std::uint64_t offset = 0;
  std::int8_t sign = 1;

  bool operator==(const Perturbation&) const = default;
};

/// population / 2 distinct offsets, each emitted as (+1, -1) consecutively.
/// Deterministic in (rng_seed, iteration). Throws ContractError on odd population.
std::vector<Perturbation> sample_offsets(std::uint64_t rng_seed, std::uint64_t iteration, std::size_t population,
                                         const NoiseTable& table, std::size_t dim);

nn::FlatParams perturb(std::span<const double> theta, const NoiseTable& table, std::uint64_t offset, int sign,
                       double sigma);
void perturb_into(std::span<const double> theta, const NoiseTable& table, std::uint64_t offset, int sign,
                  double sigma, std::span<double> out);

/// rank / (n - 1) - 0.5 with ascending ranks; tied fitnesses share their mean rank.
std::vector<double> centered_ranks(std::span<const double> fitness);

/// g = 1 / (n sigma) * sum_i w_i s_i eps_i, summed in entry order, in
/// chunks of batch_size entries.
std::vector<double> gradient_estimate(std::span<const double> weights, std::span<const Perturbation> entries,
                                      const NoiseTable& table, double sigma, std::size_t theta_len,
                                      std::size_t batch_size = 1000);

enum class OptimizerKind : std::uint8_t { kSgdMomentum = 0, kAdam = 1 };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  std::uint64_t steps = 0;
  std::vector<double> m;  // momentum buffer, or Adam first moment
  std::vector<double> v;  // Adam second moment; empty for SGDM

  bool operator==(const OptimizerState&) const = default;
};

OptimizerState make_optimizer_state(OptimizerKind kind, std::size_t dim);

/// Gradient ascent step on theta.
void optimizer_step(OptimizerState& state, const OptimizerConfig& cfg, std::span<double> theta,
                    std::span<const double> update);

/// theta *= factor. Requires 0 < factor <= 1.
void decay_weights(std::span<double> theta, double factor);

struct EsState {
  nn::FlatParams theta;
  double sigma = 0.02;
  OptimizerState optimizer;
  std::uint64_t iteration = 0;
  VbnStats vbn;
  std::uint64_t rng_seed = 0;

  bool operator==(const EsState&) const = default;
};

struct EsHyper {
  OptimizerConfig optimizer;
  double weight_decay_factor = 0.995;
  std::size_t batch_size = 1000;
};

struct WeightedPerturbation {
  std::uint64_t offset = 0;
  std::int8_t sign = 1;
  double weight = 0.0;

  bool operator==(const WeightedPerturbation&) const = default;
};

/// One update: estimate, optimizer step, decay, VBN merge, iteration += 1.
/// Master and workers both call this so their replicas stay bit-identical.
void apply_update(EsState& state, const EsHyper& hyper, const NoiseTable& table,
                  std::span<const WeightedPerturbation> entries, const VbnStats& vbn_delta);

/// -sum_k |returns_k - desired_k|.
double rtg_fitness(std::span<const double> returns, std::span<const double> desired);

/// Normal(prev_mean + alpha (prev_best - prev_mean), sigma_r).
double sample_desired_return(double prev_best, double prev_mean, double alpha, double sigma_r, std::mt19937_64& rng);

/// FNV-1a over the little-endian bytes of the values.
std::uint64_t digest(std::span<const double> values);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Environment seed of episode k for one antithetic pair (entries 2j and
/// 2j+1 share it). The base is even so consecutive k alternate parity.
std::uint64_t episode_seed(std::uint64_t rng_seed, std::uint64_t iteration, std::size_t pair, std::size_t k);

/// Whether the entry's observations feed the VBN statistics this generation.
bool vbn_selected(std::uint64_t rng_seed, std::uint64_t iteration, std::size_t entry_index, double probability);

}  // namespace evodt::es
