#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace evodt::es {

// Running observation statistics used for virtual batch normalization.
// m2 is the sum of squared deviations from the mean, so variance = m2 / count.
struct VbnStats {
  std::uint64_t count = 0;
  std::vector<double> mean;
  std::vector<double> m2;

  VbnStats() = default;
  explicit VbnStats(std::size_t dim) : mean(dim, 0.0), m2(dim, 0.0) {}

  std::size_t dim() const { return mean.size(); }
  std::vector<double> variance() const;

  bool operator==(const VbnStats&) const = default;
};

inline constexpr double kVbnEpsilon = 1e-8;

/// Statistics of a batch of row-major observations (rows = batch.size() / dim).
VbnStats vbn_from_batch(std::span<const double> batch, std::size_t dim);

/// Pairwise merge; equals the statistics of the concatenated samples.
VbnStats vbn_merge(const VbnStats& a, const VbnStats& b);

VbnStats vbn_update(const VbnStats& stats, std::span<const double> batch);

/// (obs - mean) / sqrt(var + eps); identity while count == 0.
std::vector<double> vbn_normalize(const VbnStats& stats, std::span<const double> obs);
void vbn_normalize_into(const VbnStats& stats, std::span<const double> obs, std::span<double> out);

}  // namespace evodt::es
