#include "barseg/similarity.h"

#include <algorithm>
#include <cmath>

#include "barseg/error.h"

namespace barseg {

Autosimilarity autosimilarity(const Eigen::MatrixXd& Z, bool normalize, SimilaritySource source) {
  const Eigen::Index B = Z.cols();
  if (B < 2) throw Error(Errc::too_few_entries, "autosimilarity needs at least 2 columns");
  if (!Z.allFinite()) throw Error(Errc::non_finite, "non-finite value in the input matrix");

  Eigen::MatrixXd unit = Z;
  std::vector<bool> zero(static_cast<std::size_t>(B), false);
  for (Eigen::Index b = 0; b < B; ++b) {
    double sq = 0.0;
    for (Eigen::Index r = 0; r < Z.rows(); ++r) sq += Z(r, b) * Z(r, b);
    const double norm = std::sqrt(sq);
    zero[b] = norm == 0.0;
    if (normalize && norm > 0.0) unit.col(b) /= norm;
  }

  Autosimilarity a;
  a.source = source;
  a.values.resize(B, B);
  for (Eigen::Index i = 0; i < B; ++i) {
    for (Eigen::Index j = i; j < B; ++j) {
      // Plain sequential sum: the result must not depend on column placement.
      const double* ci = unit.col(i).data();
      const double* cj = unit.col(j).data();
      double v = 0.0;
      for (Eigen::Index r = 0; r < unit.rows(); ++r) v += ci[r] * cj[r];
      if (normalize) {
        v = i == j ? (zero[i] ? 0.0 : 1.0) : std::clamp(v, -1.0, 1.0);
      }
      a.values(i, j) = v;
      a.values(j, i) = v;
    }
  }
  return a;
}

Eigen::MatrixXd flatten_bars(const BarTensor& tensor) {
  const auto rows = static_cast<Eigen::Index>(tensor.bar_size());
  Eigen::MatrixXd Z(rows, static_cast<Eigen::Index>(tensor.num_bars()));
  for (std::size_t b = 0; b < tensor.num_bars(); ++b) {
    const auto bar = tensor.bar(b);
    for (Eigen::Index r = 0; r < rows; ++r) Z(r, static_cast<Eigen::Index>(b)) = bar[r];
  }
  return Z;
}

Autosimilarity raw_feature_autosimilarity(const BarTensor& tensor) {
  return autosimilarity(flatten_bars(tensor), true, SimilaritySource::raw_feature);
}

}  // namespace barseg
