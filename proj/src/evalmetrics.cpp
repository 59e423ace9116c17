#include "barseg/evalmetrics.h"

#include <algorithm>
#include <cmath>

#include "barseg/error.h"

namespace barseg {

namespace {

void check_sorted(std::span<const double> xs, const char* what) {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || xs[i] < 0.0) {
      throw Error(Errc::invalid_argument, std::string(what) + " boundaries must be finite and non-negative");
    }
    if (i > 0 && xs[i] < xs[i - 1]) {
      throw Error(Errc::non_monotonic, std::string(what) + " boundaries are not sorted");
    }
  }
}

}  // namespace

std::size_t match_boundaries(std::span<const double> est, std::span<const double> ref,
                             double window) {
  check_sorted(est, "estimated");
  check_sorted(ref, "reference");
  if (!(window >= 0.0)) throw Error(Errc::invalid_argument, "window must be non-negative");
  std::size_t i = 0, j = 0, matched = 0;
  while (i < est.size() && j < ref.size()) {
    if (std::abs(est[i] - ref[j]) <= window) {
      ++matched;
      ++i;
      ++j;
    } else if (est[i] < ref[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return matched;
}

HitRateScore hit_rate(std::span<const double> est, std::span<const double> ref, double window,
                      bool trim) {
  if (est.empty() || ref.empty()) {
    throw Error(Errc::too_few_entries, "hit rate needs non-empty boundary lists");
  }
  if (trim) {
    est = est.size() > 2 ? est.subspan(1, est.size() - 2) : std::span<const double>{};
    ref = ref.size() > 2 ? ref.subspan(1, ref.size() - 2) : std::span<const double>{};
  }
  HitRateScore s;
  s.window = window;
  if (est.empty() || ref.empty()) return s;
  s.matched = match_boundaries(est, ref, window);
  s.precision = static_cast<double>(s.matched) / static_cast<double>(est.size());
  s.recall = static_cast<double>(s.matched) / static_cast<double>(ref.size());
  const double pr = s.precision + s.recall;
  s.f_measure = pr > 0.0 ? 2.0 * s.precision * s.recall / pr : 0.0;
  return s;
}

}  // namespace barseg
