#include "evodt/es.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "evodt/errors.hpp"

namespace evodt::es {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(splitmix64(a) ^ (b + 0x632BE59BD9B4E019ull)); }

NoiseTable NoiseTable::create(std::uint64_t seed, std::size_t length, std::size_t min_length) {
  if (length < min_length || length == 0) {
    throw ContractError("noise table of length " + std::to_string(length) + " is shorter than required " +
                        std::to_string(min_length));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> v(length);
  for (float& x : v) x = static_cast<float>(normal(rng));
  NoiseTable t;
  t.values_ = std::make_shared<const std::vector<float>>(std::move(v));
  t.seed_ = seed;
  return t;
}

NoiseTable NoiseTable::from_values(std::vector<float> values) {
  NoiseTable t;
  t.values_ = std::make_shared<const std::vector<float>>(std::move(values));
  return t;
}

std::span<const float> NoiseTable::slice(std::uint64_t offset, std::size_t dim) const {
  if (offset > size() || dim > size() - offset) throw ContractError("noise slice out of range");
  return std::span<const float>(*values_).subspan(offset, dim);
}

std::vector<Perturbation> sample_offsets(std::uint64_t rng_seed, std::uint64_t iteration, std::size_t population,
                                         const NoiseTable& table, std::size_t dim) {
  if (population == 0 || population % 2 != 0) throw ContractError("population must be even and positive");
  if (dim > table.size()) throw ContractError("noise table shorter than the parameter vector");
  const std::uint64_t max_offset = table.size() - dim;
  const std::size_t pairs = population / 2;
  if (max_offset + 1 < pairs) throw ContractError("noise table too small for distinct offsets");

  std::mt19937_64 rng(mix_seed(rng_seed, iteration));
  std::uniform_int_distribution<std::uint64_t> pick(0, max_offset);
  std::unordered_set<std::uint64_t> seen;
  std::vector<Perturbation> out;
  out.reserve(population);
  while (out.size() < population) {
    const std::uint64_t off = pick(rng);
    if (!seen.insert(off).second) continue;
    out.push_back({off, 1});
    out.push_back({off, -1});
  }
  return out;
}

void perturb_into(std::span<const double> theta, const NoiseTable& table, std::uint64_t offset, int sign,
                  double sigma, std::span<double> out) {
  if (out.size() != theta.size()) throw ContractError("perturbation output size mismatch");
  const auto noise = table.slice(offset, theta.size());
  const double scale = static_cast<double>(sign) * sigma;
  for (std::size_t i = 0; i < theta.size(); ++i) out[i] = theta[i] + scale * static_cast<double>(noise[i]);
}

nn::FlatParams perturb(std::span<const double> theta, const NoiseTable& table, std::uint64_t offset, int sign,
                       double sigma) {
  nn::FlatParams out(theta.size());
  perturb_into(theta, table, offset, sign, sigma, out.view());
  return out;
}

std::vector<double> centered_ranks(std::span<const double> fitness) {
  const std::size_t n = fitness.size();
  std::vector<double> weights(n, 0.0);
  if (n <= 1) return weights;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fitness[a] < fitness[b]; });
  const double denom = static_cast<double>(n - 1);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && fitness[order[j]] == fitness[order[i]]) ++j;
    // Tie group [i, j) shares the mean of ranks i..j-1.
    const double rank = 0.5 * static_cast<double>(i + j - 1);
    const double w = rank / denom - 0.5;
    for (std::size_t k = i; k < j; ++k) weights[order[k]] = w;
    i = j;
  }
  return weights;
}

std::vector<double> gradient_estimate(std::span<const double> weights, std::span<const Perturbation> entries,
                                      const NoiseTable& table, double sigma, std::size_t theta_len,
                                      std::size_t batch_size) {
  if (weights.size() != entries.size()) throw ContractError("weights and entries differ in length");
  if (!(sigma > 0.0)) throw ContractError("sigma must be positive");
  std::vector<double> total(theta_len, 0.0);
  if (entries.empty()) return total;
  batch_size = std::max<std::size_t>(batch_size, 1);
  std::vector<double> batch(theta_len);
  for (std::size_t start = 0; start < entries.size(); start += batch_size) {
    std::fill(batch.begin(), batch.end(), 0.0);
    const std::size_t stop = std::min(entries.size(), start + batch_size);
    for (std::size_t i = start; i < stop; ++i) {
      const double coeff = weights[i] * static_cast<double>(entries[i].sign);
      if (coeff == 0.0) continue;
      const auto noise = table.slice(entries[i].offset, theta_len);
      for (std::size_t d = 0; d < theta_len; ++d) batch[d] += coeff * static_cast<double>(noise[d]);
    }
    for (std::size_t d = 0; d < theta_len; ++d) total[d] += batch[d];
  }
  const double scale = 1.0 / (static_cast<double>(entries.size()) * sigma);
  for (double& g : total) g *= scale;
  return total;
}

OptimizerState make_optimizer_state(OptimizerKind kind, std::size_t dim) {
  OptimizerState s;
  s.kind = kind;
  s.m.assign(dim, 0.0);
  if (kind == OptimizerKind::kAdam) s.v.assign(dim, 0.0);
  return s;
}

void optimizer_step(OptimizerState& state, const OptimizerConfig& cfg, std::span<double> theta,
                    std::span<const double> update) {
  if (theta.size() != update.size() || state.m.size() != theta.size()) {
    throw ContractError("optimizer dimensions do not match parameters");
  }
  ++state.steps;
  if (state.kind == OptimizerKind::kSgdMomentum) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      state.m[i] = cfg.momentum * state.m[i] + update[i];
      theta[i] += cfg.learning_rate * state.m[i];
    }
    return;
  }
  if (state.v.size() != theta.size()) throw ContractError("adam state dimensions do not match parameters");
  const double t = static_cast<double>(state.steps);
  const double a = cfg.learning_rate * std::sqrt(1.0 - std::pow(cfg.beta2, t)) / (1.0 - std::pow(cfg.beta1, t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * update[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * update[i] * update[i];
    theta[i] += a * state.m[i] / (std::sqrt(state.v[i]) + cfg.epsilon);
  }
}

void decay_weights(std::span<double> theta, double factor) {
  if (!(factor > 0.0 && factor <= 1.0)) throw ContractError("decay factor must lie in (0, 1]");
  for (double& v : theta) v *= factor;
}

void apply_update(EsState& state, const EsHyper& hyper, const NoiseTable& table,
                  std::span<const WeightedPerturbation> entries, const VbnStats& vbn_delta) {
  std::vector<double> weights;
  std::vector<Perturbation> perts;
  weights.reserve(entries.size());
  perts.reserve(entries.size());
  for (const auto& e : entries) {
    weights.push_back(e.weight);
    perts.push_back({e.offset, e.sign});
  }
  const auto g = gradient_estimate(weights, perts, table, state.sigma, state.theta.size(), hyper.batch_size);
  optimizer_step(state.optimizer, hyper.optimizer, state.theta.view(), g);
  decay_weights(state.theta.view(), hyper.weight_decay_factor);
  state.vbn = vbn_merge(state.vbn, vbn_delta);
  ++state.iteration;
}

double rtg_fitness(std::span<const double> returns, std::span<const double> desired) {
  if (returns.size() != desired.size() || returns.empty()) {
    throw ContractError("returns and desired returns must be equal-length and nonempty");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < returns.size(); ++k) total += std::abs(returns[k] - desired[k]);
  return -total;
}

double sample_desired_return(double prev_best, double prev_mean, double alpha, double sigma_r, std::mt19937_64& rng) {
  if (alpha < 0.0 || alpha > 1.0 || sigma_r < 0.0) throw ContractError("alpha must be in [0,1], sigma_r >= 0");
  const double mu = prev_mean + alpha * (prev_best - prev_mean);
  if (sigma_r == 0.0) return mu;
  std::normal_distribution<double> normal(mu, sigma_r);
  return normal(rng);
}

std::uint64_t digest(std::span<const double> values) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (double v : values) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFFu;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::uint64_t episode_seed(std::uint64_t rng_seed, std::uint64_t iteration, std::size_t pair, std::size_t k) {
  const std::uint64_t base = mix_seed(mix_seed(mix_seed(rng_seed, 0x5EED), iteration), pair) & ~std::uint64_t{1};
  return base + k;
}

bool vbn_selected(std::uint64_t rng_seed, std::uint64_t iteration, std::size_t entry_index, double probability) {
  if (probability <= 0.0) return false;
  if (probability >= 1.0) return true;
  const std::uint64_t h = mix_seed(mix_seed(rng_seed ^ 0x7B1Dull, iteration), entry_index);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < probability;
}

}  // namespace evodt::es
