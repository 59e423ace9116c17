#include "barseg/segmentation.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#include "barseg/error.h"

namespace barseg {

namespace {

constexpr int kShortTermBars = 4;

}  // namespace

Kernel::Kernel(int n) : n_(n) {
  if (n < 1) throw Error(Errc::invalid_argument, "kernel size must be at least 1");
  values_.resize(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int d = std::abs(i - j);
      values_[static_cast<std::size_t>(i) * n + j] = d == 0 ? 0 : (d <= kShortTermBars ? 2 : 1);
    }
  }
}

long Kernel::total() const {
  long s = 0;
  for (int v : values_) s += v;
  return s;
}

Kernel build_kernel(int n) { return Kernel(n); }

void SegmentationConfig::validate() const {
  if (min_segment_bars < 1 || max_segment_bars < min_segment_bars || !(lambda >= 0.0) ||
      target_size < 1 || !std::isfinite(normalization_exponent)) {
    throw Error(Errc::invalid_argument, "invalid segmentation configuration");
  }
}

double kernel_sum(const Autosimilarity& A, std::size_t start, std::size_t end) {
  // Same weights as Kernel, applied without materializing it.
  double s = 0.0;
  for (std::size_t u = start; u < end; ++u) {
    for (std::size_t v = start; v < end; ++v) {
      const std::size_t d = u > v ? u - v : v - u;
      if (d == 0) continue;
      s += (d <= kShortTermBars ? 2.0 : 1.0) * A.values(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v));
    }
  }
  return s;
}

double regularity_penalty(int n, int target_size) {
  return std::abs(std::log2(static_cast<double>(n) / target_size));
}

double segment_cost(const Autosimilarity& A, std::size_t start, std::size_t end,
                    const SegmentationConfig& config) {
  const auto B = static_cast<std::size_t>(A.size());
  if (!(start < end) || end > B) {
    throw Error(Errc::out_of_range, "segment bounds outside the autosimilarity");
  }
  const int n = static_cast<int>(end - start);
  if (n > config.max_segment_bars || n < config.min_segment_bars) {
    throw Error(Errc::out_of_range, "segment length " + std::to_string(n) + " outside [" +
                                        std::to_string(config.min_segment_bars) + ", " +
                                        std::to_string(config.max_segment_bars) + "]");
  }
  const double norm = std::pow(static_cast<double>(n), config.normalization_exponent);
  return kernel_sum(A, start, end) / norm -
         config.lambda * regularity_penalty(n, config.target_size);
}

SegmentationResult dp_segment(const Autosimilarity& A, const SegmentationConfig& config) {
  config.validate();
  const auto B = static_cast<std::size_t>(A.size());
  if (B < 2) throw Error(Errc::too_few_entries, "segmentation needs at least 2 bars");
  if (B < static_cast<std::size_t>(config.min_segment_bars)) {
    throw Error(Errc::infeasible, "fewer bars than the minimum segment length");
  }
  const auto min_len = static_cast<std::size_t>(config.min_segment_bars);
  const auto max_len = static_cast<std::size_t>(config.max_segment_bars);
  constexpr double kUnreachable = -std::numeric_limits<double>::infinity();

  std::vector<double> best(B + 1, kUnreachable);
  std::vector<std::size_t> prev(B + 1, 0);
  std::vector<double> cost_of(B + 1, 0.0);
  best[0] = 0.0;
  for (std::size_t j = 1; j <= B; ++j) {
    if (j < min_len) continue;
    const std::size_t first = j > max_len ? j - max_len : 0;
    for (std::size_t i = first; i + min_len <= j; ++i) {
      if (best[i] == kUnreachable) continue;
      const double c = segment_cost(A, i, j, config);
      const double total = best[i] + c;
      // Strict comparison keeps the smallest i on ties.
      if (total > best[j]) {
        best[j] = total;
        prev[j] = i;
        cost_of[j] = c;
      }
    }
  }
  if (best[B] == kUnreachable) {
    throw Error(Errc::infeasible, "no segmentation satisfies the length bounds");
  }

  SegmentationResult r;
  r.score = best[B];
  for (std::size_t j = B; j > 0; j = prev[j]) {
    r.boundaries_bars.push_back(j);
    r.segment_costs.push_back(cost_of[j]);
  }
  r.boundaries_bars.push_back(0);
  std::reverse(r.boundaries_bars.begin(), r.boundaries_bars.end());
  std::reverse(r.segment_costs.begin(), r.segment_costs.end());
  return r;
}

std::vector<double> boundaries_to_seconds(const std::vector<std::size_t>& boundaries,
                                          const BarGrid& grid) {
  std::vector<double> out;
  out.reserve(boundaries.size());
  for (std::size_t b : boundaries) {
    if (b > grid.num_bars()) throw Error(Errc::out_of_range, "boundary index past the last bar");
    out.push_back(b < grid.num_bars() ? grid.bar_start(b) : grid.song_end());
  }
  return out;
}

}  // namespace barseg
