#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "barseg/similarity.h"
#include "test_support.h"

using namespace barseg;
using barseg::testing::throws_errc;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST(Autosimilarity, IdenticalUnitColumns) {
  Eigen::MatrixXd Z(3, 2);
  Z << 0.6, 0.6, 0.8, 0.8, 0.0, 0.0;
  const auto A = autosimilarity(Z);
  EXPECT_EQ(A.values, Eigen::MatrixXd::Ones(2, 2));
}

TEST(Autosimilarity, OrthogonalColumnsGiveIdentity) {
  const auto A = autosimilarity(3.0 * Eigen::MatrixXd::Identity(5, 5));
  EXPECT_EQ(A.values, Eigen::MatrixXd::Identity(5, 5));
}

TEST(Autosimilarity, RandomMatchesScalarCosine) {
  const auto Z = random_matrix(8, 30, 1);
  const auto A = autosimilarity(Z);
  ASSERT_EQ(A.size(), 30);
  for (int i = 0; i < 30; ++i) {
    for (int j = 0; j < 30; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (int r = 0; r < 8; ++r) {
        dot += Z(r, i) * Z(r, j);
        ni += Z(r, i) * Z(r, i);
        nj += Z(r, j) * Z(r, j);
      }
      EXPECT_NEAR(A(i, j), dot / std::sqrt(ni * nj), 1e-12);
      EXPECT_EQ(A(i, j), A(j, i));
    }
    EXPECT_EQ(A(i, i), 1.0);
  }
}

TEST(Autosimilarity, ZeroColumnsAndRange) {
  Eigen::MatrixXd Z = random_matrix(4, 6, 2);
  Z.col(2).setZero();
  const auto A = autosimilarity(Z);
  EXPECT_EQ(A(2, 2), 0.0);
  for (int j = 0; j < 6; ++j) EXPECT_EQ(A(2, j), 0.0);
  EXPECT_LE(A.values.maxCoeff(), 1.0);
  EXPECT_GE(A.values.minCoeff(), -1.0);
}

TEST(Autosimilarity, UnnormalizedIsGram) {
  const auto Z = random_matrix(5, 7, 3);
  const auto A = autosimilarity(Z, false);
  EXPECT_TRUE(A.values.isApprox(Z.transpose() * Z, 1e-12));
}

TEST(Autosimilarity, ScaleInvariance) {
  const auto Z = random_matrix(6, 12, 4);
  const auto A = autosimilarity(Z);
  for (double alpha : {0.5, 2.0, 1024.0}) {
    EXPECT_EQ(autosimilarity(alpha * Z).values, A.values) << alpha;
  }
  for (double alpha : {0.37, 13.1}) {
    EXPECT_LT((autosimilarity(alpha * Z).values - A.values).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Autosimilarity, PermutationEquivariance) {
  const auto Z = random_matrix(6, 10, 5);
  std::vector<int> perm = {3, 7, 0, 9, 1, 4, 8, 2, 6, 5};
  Eigen::MatrixXd P(6, 10);
  for (int j = 0; j < 10; ++j) P.col(j) = Z.col(perm[j]);
  const auto A = autosimilarity(Z);
  const auto B = autosimilarity(P);
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) EXPECT_EQ(B(i, j), A(perm[i], perm[j]));
  }
}

TEST(Autosimilarity, PositiveSemidefinite) {
  for (unsigned seed = 10; seed < 15; ++seed) {
    const auto A = autosimilarity(random_matrix(4, 9, seed));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A.values);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8);
  }
}

TEST(Autosimilarity, Errors) {
  EXPECT_TRUE(throws_errc([] { autosimilarity(Eigen::MatrixXd::Ones(3, 1)); }, Errc::too_few_entries));
  Eigen::MatrixXd Z = Eigen::MatrixXd::Ones(3, 3);
  Z(1, 1) = std::nan("");
  EXPECT_TRUE(throws_errc([&] { autosimilarity(Z); }, Errc::non_finite));
}

TEST(RawFeature, BlockPattern) {
  BarTensor t(4, 4, FeatureKind::mel);
  // P and Q live on disjoint bins, so they are orthogonal.
  for (std::size_t b = 0; b < 4; ++b) {
    auto bar = t.bar(b);
    for (int k = 0; k < 96; ++k) bar[k * 4 + (b < 2 ? 0 : 3)] = 0.5f + 0.001f * k;
  }
  const auto A = raw_feature_autosimilarity(t);
  EXPECT_EQ(A.source, SimilaritySource::raw_feature);
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(4, 4);
  expected.block(0, 0, 2, 2).setOnes();
  expected.block(2, 2, 2, 2).setOnes();
  EXPECT_EQ(A.values, expected);
}

TEST(RawFeature, RepeatedBarAllOnes) {
  BarTensor t(5, 8, FeatureKind::chroma);
  std::mt19937 rng(6);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> bar(96 * 8);
  for (auto& v : bar) v = u(rng);
  for (std::size_t b = 0; b < 5; ++b) std::copy(bar.begin(), bar.end(), t.bar(b).begin());
  EXPECT_EQ(raw_feature_autosimilarity(t).values, Eigen::MatrixXd::Ones(5, 5));
}

TEST(RawFeature, EqualsFlattenedAutosimilarity) {
  BarTensor t(6, 12, FeatureKind::mfcc);
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : t.data()) v = u(rng);
  const auto flat = flatten_bars(t);
  ASSERT_EQ(flat.rows(), 96 * 12);
  for (std::size_t b = 0; b < 6; ++b) {
    for (int k = 0; k < 96; ++k) {
      for (int f = 0; f < 12; ++f) EXPECT_EQ(flat(k * 12 + f, static_cast<Eigen::Index>(b)), t.at(b, k, f));
    }
  }
  EXPECT_EQ(raw_feature_autosimilarity(t).values, autosimilarity(flat).values);
}
