#include "evodt/vbn.hpp"

#include <cmath>

#include "evodt/errors.hpp"

namespace evodt::es {

std::vector<double> VbnStats::variance() const {
  std::vector<double> var(dim(), 0.0);
  if (count == 0) return var;
  for (std::size_t i = 0; i < dim(); ++i) var[i] = m2[i] / static_cast<double>(count);
  return var;
}

VbnStats vbn_from_batch(std::span<const double> batch, std::size_t dim) {
  if (dim == 0 || batch.size() % dim != 0) throw ContractError("observation batch is not a whole number of rows");
  VbnStats s(dim);
  const std::size_t rows = batch.size() / dim;
  // Welford, one row at a time.
  for (std::size_t r = 0; r < rows; ++r) {
    ++s.count;
    const double n = static_cast<double>(s.count);
    for (std::size_t i = 0; i < dim; ++i) {
      const double x = batch[r * dim + i];
      const double delta = x - s.mean[i];
      s.mean[i] += delta / n;
      s.m2[i] += delta * (x - s.mean[i]);
    }
  }
  return s;
}

VbnStats vbn_merge(const VbnStats& a, const VbnStats& b) {
  if (b.count == 0) return a;
  if (a.count == 0) return b;
  if (a.dim() != b.dim()) throw ContractError("merging statistics of different dimension");
  VbnStats out(a.dim());
  out.count = a.count + b.count;
  const double na = static_cast<double>(a.count);
  const double nb = static_cast<double>(b.count);
  const double n = static_cast<double>(out.count);
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double delta = b.mean[i] - a.mean[i];
    out.mean[i] = a.mean[i] + delta * nb / n;
    out.m2[i] = a.m2[i] + b.m2[i] + delta * delta * na * nb / n;
  }
  return out;
}

VbnStats vbn_update(const VbnStats& stats, std::span<const double> batch) {
  if (batch.empty()) return stats;
  return vbn_merge(stats, vbn_from_batch(batch, stats.dim()));
}

void vbn_normalize_into(const VbnStats& stats, std::span<const double> obs, std::span<double> out) {
  if (out.size() != obs.size()) throw ContractError("normalization output size mismatch");
  if (stats.count == 0) {
    std::copy(obs.begin(), obs.end(), out.begin());
    return;
  }
  if (obs.size() != stats.dim()) throw ContractError("observation size does not match statistics");
  const double n = static_cast<double>(stats.count);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    out[i] = (obs[i] - stats.mean[i]) / std::sqrt(stats.m2[i] / n + kVbnEpsilon);
  }
}

std::vector<double> vbn_normalize(const VbnStats& stats, std::span<const double> obs) {
  std::vector<double> out(obs.size());
  vbn_normalize_into(stats, obs, out);
  return out;
}

}  // namespace evodt::es
