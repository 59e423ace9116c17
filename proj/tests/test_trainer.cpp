#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "barseg/trainer.h"
#include "test_support.h"

using namespace barseg;
using barseg::testing::throws_errc;

namespace {

BarTensor two_template_tensor(std::size_t bars, int F, unsigned seed) {
  BarTensor t(bars, F, FeatureKind::log_mel);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> a(96 * F), b(96 * F);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  for (std::size_t i = 0; i < bars; ++i) {
    const auto& src = (i / 2) % 2 ? b : a;
    std::copy(src.begin(), src.end(), t.bar(i).begin());
  }
  return t;
}

// Scalar Adam, written from the update rule.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double w, double g, double lr) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    return w - lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

}  // namespace

TEST(Adam, ZeroGradientLeavesParams) {
  auto p = init_kaiming<double>({2, 4, 1});
  const auto before = p;
  auto state = AdamState<double>::zeros(4, 2);
  const auto g = Gradients<double>::zeros(4, 2);
  adam_step(p, g, state, 1e-3);
  EXPECT_TRUE(p == before);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepIsLearningRate) {
  auto p = AEParams<double>::zeros(4, 1);
  auto g = Gradients<double>::zeros(4, 1);
  g.conv1_b[0] = 1.0;
  auto state = AdamState<double>::zeros(4, 1);
  adam_step(p, g, state, 1e-3);
  EXPECT_NEAR(p.conv1_b[0], -1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, QuadraticMatchesScalarReference) {
  auto p = AEParams<double>::zeros(4, 1);
  p.conv1_b[0] = 1.0;
  auto state = AdamState<double>::zeros(4, 1);
  ScalarAdam ref;
  double w = 1.0;
  for (int i = 0; i < 100; ++i) {
    auto g = Gradients<double>::zeros(4, 1);
    g.conv1_b[0] = 2.0 * p.conv1_b[0];
    adam_step(p, g, state, 0.1);
    w = ref.step(w, 2.0 * w, 0.1);
    ASSERT_NEAR(p.conv1_b[0], w, 1e-12);
  }
  EXPECT_LT(std::abs(p.conv1_b[0]), 0.05);
}

TEST(Adam, NonFiniteGradientRejected) {
  auto p = init_kaiming<float>({2, 4, 1});
  const auto before = p;
  auto g = Gradients<float>::zeros(4, 2);
  g.dec_fc_w[5] = std::nanf("");
  auto state = AdamState<float>::zeros(4, 2);
  EXPECT_TRUE(throws_errc([&] { adam_step(p, g, state, 1e-3); }, Errc::non_finite));
  EXPECT_TRUE(p == before);
}

TEST(Scheduler, FlatLossSchedule) {
  TrainConfig cfg;
  cfg.lr_min = 1e-7;  // floor low enough that every plateau drops the rate
  PlateauScheduler s(cfg);
  std::vector<int> drops;
  int stop = 0;
  for (int e = 1; e <= 200 && stop == 0; ++e) {
    const auto ev = s.observe(1.0);
    if (ev.lr_dropped) drops.push_back(ev.epoch);
    if (ev.stop) stop = ev.epoch;
  }
  EXPECT_EQ(drops, (std::vector<int>{21, 41, 61, 81}));
  EXPECT_EQ(stop, 101);
}

TEST(Scheduler, DefaultFloorStopsDropping) {
  PlateauScheduler s{TrainConfig{}};
  std::vector<int> drops;
  std::vector<double> rates;
  int stop = 0;
  for (int e = 1; e <= 200 && stop == 0; ++e) {
    rates.push_back(s.lr());
    const auto ev = s.observe(1.0);
    if (ev.lr_dropped) drops.push_back(ev.epoch);
    if (ev.stop) stop = ev.epoch;
  }
  // 1e-3 -> 1e-4 -> 1e-5, then the floor holds.
  EXPECT_EQ(drops, (std::vector<int>{21, 41}));
  EXPECT_EQ(s.lr(), 1e-5);
  EXPECT_EQ(stop, 101);
  for (std::size_t i = 1; i < rates.size(); ++i) EXPECT_LE(rates[i], rates[i - 1]);
}

TEST(Scheduler, ImprovementResetsCounters) {
  PlateauScheduler s{TrainConfig{}};
  double loss = 1.0;
  for (int e = 1; e <= 300; ++e) {
    if (e % 15 == 0) loss *= 0.99;
    const auto ev = s.observe(loss);
    EXPECT_FALSE(ev.lr_dropped);
    EXPECT_FALSE(ev.stop);
  }
  EXPECT_EQ(s.lr(), 1e-3);
}

TEST(EpochOrder, PermutationAndDeterminism) {
  const auto a = epoch_order(37, 5, 1);
  EXPECT_EQ(a, epoch_order(37, 5, 1));
  EXPECT_NE(a, epoch_order(37, 5, 2));
  EXPECT_NE(a, epoch_order(37, 6, 1));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 37u);
  EXPECT_EQ(*std::max_element(a.begin(), a.end()), 36u);
}

TEST(Train, ZeroBarsDriveLossDown) {
  BarTensor t(6, 4, FeatureKind::log_mel);
  TrainConfig cfg;
  cfg.max_epochs = 400;
  const auto r = train(t, {2, 4, 3}, cfg);
  EXPECT_LT(r.report.best_loss, 1e-2 * r.report.loss_history.front());
}

TEST(Train, TwoTemplatesReduceLoss) {
  const auto t = two_template_tensor(10, 4, 9);
  for (std::uint64_t seed : {1u, 2u}) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.max_epochs = 300;
    const auto r = train(t, {2, 4, seed}, cfg);
    const auto& h = r.report.loss_history;
    ASSERT_FALSE(h.empty());
    EXPECT_LT(h.back(), 0.25 * h.front()) << "seed " << seed;
    EXPECT_LE(r.report.best_loss, h.front());
  }
}

TEST(Train, ReportInvariantsAndReproducibility) {
  const auto t = two_template_tensor(12, 8, 4);
  TrainConfig cfg;
  cfg.seed = 17;
  cfg.max_epochs = 150;
  cfg.plateau_patience = 5;
  cfg.early_stop_patience = 12;
  const auto a = train(t, {3, 8, 17}, cfg);
  const auto b = train(t, {3, 8, 17}, cfg);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_EQ(a.report.loss_history, b.report.loss_history);
  EXPECT_EQ(a.report.lr_history, b.report.lr_history);

  const auto& r = a.report;
  EXPECT_EQ(r.loss_history.size(), r.lr_history.size());
  EXPECT_LE(r.loss_history.size(), 150u);
  for (std::size_t i = 1; i < r.lr_history.size(); ++i) EXPECT_LE(r.lr_history[i], r.lr_history[i - 1]);
  for (double lr : r.lr_history) EXPECT_GE(lr, cfg.lr_min);
  const auto best = std::min_element(r.loss_history.begin(), r.loss_history.end());
  EXPECT_EQ(r.best_loss, *best);
  EXPECT_EQ(r.best_epoch, static_cast<int>(best - r.loss_history.begin()) + 1);
  if (r.stop_reason == StopReason::early_stop) {
    EXPECT_EQ(static_cast<int>(r.loss_history.size()) - r.best_epoch, cfg.early_stop_patience);
  }
  // Batch-internal threads do not change the result.
  const auto c = train(t, {3, 8, 17}, [&] {
    TrainConfig c2 = cfg;
    c2.threads = 2;
    return c2;
  }());
  EXPECT_TRUE(a.params == c.params);
}

TEST(Train, Errors) {
  BarTensor one(1, 4, FeatureKind::log_mel);
  EXPECT_TRUE(throws_errc([&] { train(one, {2, 4, 1}, {}); }, Errc::too_few_entries));
  BarTensor t(4, 8, FeatureKind::log_mel);
  EXPECT_TRUE(throws_errc([&] { train(t, {2, 4, 1}, {}); }, Errc::shape_mismatch));
  TrainConfig bad;
  bad.lr_min = 1.0;
  EXPECT_TRUE(throws_errc([&] { train(t, {2, 8, 1}, bad); }, Errc::invalid_argument));
}

TEST(EncodeSong, ColumnsMatchForwardLatents) {
  auto t = two_template_tensor(6, 8, 2);
  const auto p = init_kaiming<float>({4, 8, 5});
  const auto Z = encode_song(p, t);
  ASSERT_EQ(Z.rows(), 4);
  ASSERT_EQ(Z.cols(), 6);
  // Bars 0,1 share a template, so do 2,3.
  EXPECT_EQ(Z.col(0), Z.col(1));
  EXPECT_EQ(Z.col(2), Z.col(3));
  for (std::size_t b = 0; b < 6; ++b) {
    const auto r = forward<float>(p, t.bar(b));
    for (int i = 0; i < 4; ++i) EXPECT_EQ(Z(i, static_cast<Eigen::Index>(b)), r.latents[i]);
  }
  BarTensor zeros(3, 8, FeatureKind::log_mel);
  const auto Z0 = encode_song(p, zeros);
  EXPECT_EQ(Z0.col(0), Z0.col(1));
  EXPECT_EQ(Z0.col(1), Z0.col(2));
}
