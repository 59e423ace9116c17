#pragma once

#include <cstddef>
#include <vector>

#include "barseg/audio_io.h"
#include "barseg/similarity.h"

namespace barseg {

/// Square segment kernel: 0 on the diagonal, 2 for bars at most 4 apart,
/// 1 beyond. It rewards blocks of mutually similar bars, weighting the
/// short-term neighbourhood double.
class Kernel {
 public:
  explicit Kernel(int n);

  int size() const { return n_; }
  int operator()(int i, int j) const { return values_[static_cast<std::size_t>(i) * n_ + j]; }
  /// Sum of all entries.
  long total() const;

 private:
  int n_;
  std::vector<int> values_;
};

Kernel build_kernel(int n);

struct SegmentationConfig {
  int max_segment_bars = 36;
  int min_segment_bars = 1;
  /// Weight of the regularity penalty |log2(n / target_size)|.
  double lambda = 0.5;
  int target_size = 8;
  /// The kernel sum is divided by n^normalization_exponent.
  double normalization_exponent = 1.0;

  void validate() const;
};

struct SegmentationResult {
  std::vector<std::size_t> boundaries_bars;  // 0 = first, B = last
  std::vector<double> boundaries_seconds;    // filled by the pipeline
  std::vector<double> segment_costs;
  double score = 0.0;
};

/// Raw kernel response of segment [start, end): sum_{u,v} K[u][v] A[start+u][start+v].
double kernel_sum(const Autosimilarity& A, std::size_t start, std::size_t end);

/// Regularity penalty of a segment of n bars (before weighting by lambda).
double regularity_penalty(int n, int target_size);

/// Normalized kernel response minus the weighted regularity penalty.
double segment_cost(const Autosimilarity& A, std::size_t start, std::size_t end,
                    const SegmentationConfig& config);

/// Segmentation maximizing the total segment cost. Among optimal choices for
/// each end point, the smallest start (longest final segment) wins.
SegmentationResult dp_segment(const Autosimilarity& A, const SegmentationConfig& config = {});

/// Bar index b maps to bar_starts[b]; index B maps to the song end.
std::vector<double> boundaries_to_seconds(const std::vector<std::size_t>& boundaries,
                                          const BarGrid& grid);

}  // namespace barseg
