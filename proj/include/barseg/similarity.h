#pragma once

#include <Eigen/Core>

#include "barseg/barwise.h"

namespace barseg {

/// d_ls x B matrix whose column b is the latent vector of bar b.
using LatentMatrix = Eigen::MatrixXd;

enum class SimilaritySource { latent, raw_feature };

/// B x B cosine autosimilarity. Symmetric by construction; the diagonal is 1
/// for non-zero columns and 0 for zero columns; entries lie in [-1, 1].
struct Autosimilarity {
  Eigen::MatrixXd values;
  SimilaritySource source = SimilaritySource::latent;

  Eigen::Index size() const { return values.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values(i, j); }
};

/// Z^T Z over the columns of Z. With `normalize`, columns are first scaled
/// to unit length (zero columns stay zero).
Autosimilarity autosimilarity(const Eigen::MatrixXd& Z, bool normalize = true,
                              SimilaritySource source = SimilaritySource::latent);

/// Each bar flattened to a 96*F column.
Eigen::MatrixXd flatten_bars(const BarTensor& tensor);

Autosimilarity raw_feature_autosimilarity(const BarTensor& tensor);

}  // namespace barseg
