#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace barseg {

struct HitRateScore {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  double window = 0.0;
  std::size_t matched = 0;
};

/// Size of a maximum one-to-one matching between estimated and reference
/// boundaries with |e - r| <= window. Both lists must be sorted.
///
/// On a line, greedily pairing the two earliest unmatched boundaries when
/// they are within the window (and otherwise discarding the earlier one) is
/// optimal.
std::size_t match_boundaries(std::span<const double> est, std::span<const double> ref,
                             double window);

/// Hit-rate precision, recall and F-measure. With `trim`, the first and last
/// boundary of both lists (piece start and end) are ignored.
HitRateScore hit_rate(std::span<const double> est, std::span<const double> ref, double window,
                      bool trim = false);

}  // namespace barseg
