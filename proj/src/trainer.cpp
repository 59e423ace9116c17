#include "barseg/trainer.h"

#include <cmath>
#include <limits>
#include <random>

#include "barseg/parallel.h"

namespace barseg {

void TrainConfig::validate() const {
  const bool ok = lr0 > 0 && lr_min > 0 && lr_min <= lr0 && plateau_patience > 0 &&
                  lr_divisor > 1 && early_stop_patience > 0 && max_epochs > 0 &&
                  batch_size > 0 && beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 &&
                  epsilon > 0 && threads >= 0;
  if (!ok) throw Error(Errc::invalid_argument, "invalid training configuration");
}

template <typename Real>
void adam_step(AEParams<Real>& params, const Gradients<Real>& grads, AdamState<Real>& state,
               double lr, double beta1, double beta2, double epsilon) {
  if (grads.feature_dim != params.feature_dim || grads.d_ls != params.d_ls) {
    throw Error(Errc::shape_mismatch, "gradient shapes differ from the parameters");
  }
  if (state.first_moment.feature_dim != params.feature_dim || state.first_moment.d_ls != params.d_ls) {
    state = AdamState<Real>::zeros(params.feature_dim, params.d_ls);
  }
  for (auto g : grads.tensors()) {
    for (Real v : g) {
      if (!std::isfinite(v)) throw Error(Errc::non_finite, "non-finite gradient");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  const Real b1 = static_cast<Real>(beta1), b2 = static_cast<Real>(beta2);
  const Real one_b1 = static_cast<Real>(1.0 - beta1), one_b2 = static_cast<Real>(1.0 - beta2);
  const Real step_size = static_cast<Real>(lr / c1);
  const Real inv_sqrt_c2 = static_cast<Real>(1.0 / std::sqrt(c2));
  const Real eps = static_cast<Real>(epsilon);

  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    Real* __restrict pk = p[k].data();
    const Real* __restrict gk = g[k].data();
    Real* __restrict mk = m[k].data();
    Real* __restrict vk = v[k].data();
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      mk[i] = b1 * mk[i] + one_b1 * gk[i];
      vk[i] = b2 * vk[i] + one_b2 * gk[i] * gk[i];
      pk[i] -= step_size * mk[i] / (std::sqrt(vk[i]) * inv_sqrt_c2 + eps);
    }
  }
}

template void adam_step<float>(AEParams<float>&, const Gradients<float>&, AdamState<float>&, double,
                               double, double, double);
template void adam_step<double>(AEParams<double>&, const Gradients<double>&, AdamState<double>&,
                                double, double, double, double);

std::string_view stop_reason_name(StopReason reason) {
  switch (reason) {
    case StopReason::early_stop: return "early_stop";
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::diverged: return "diverged";
  }
  return "unknown";
}

PlateauScheduler::PlateauScheduler(const TrainConfig& config)
    : config_(config), lr_(config.lr0), best_(std::numeric_limits<double>::infinity()) {}

PlateauScheduler::Event PlateauScheduler::observe(double epoch_loss) {
  Event e;
  e.epoch = ++epoch_;
  if (epoch_loss < best_) {
    best_ = epoch_loss;
    since_best_ = 0;
    plateau_ = 0;
    e.improved = true;
    return e;
  }
  ++since_best_;
  ++plateau_;
  if (since_best_ >= config_.early_stop_patience) {
    e.stop = true;
    return e;
  }
  if (plateau_ >= config_.plateau_patience) {
    plateau_ = 0;
    double next = lr_ / config_.lr_divisor;
    // Snap to the floor so repeated division cannot leave it an ulp above.
    if (next < config_.lr_min * (1.0 + 1e-9)) next = config_.lr_min;
    if (next < lr_) {
      lr_ = next;
      e.lr_dropped = true;
    }
  }
  return e;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    // Multiply-shift range reduction: portable, unlike std distributions.
    const auto j = static_cast<std::size_t>(((rng() >> 32) * static_cast<std::uint64_t>(i)) >> 32);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

TrainResult train(const BarTensor& tensor, const AEConfig& ae_config,
                  const TrainConfig& train_config) {
  train_config.validate();
  if (tensor.num_bars() < 2) throw Error(Errc::too_few_entries, "training needs at least 2 bars");
  if (tensor.feature_dim() != ae_config.feature_dim) {
    throw Error(Errc::shape_mismatch, "tensor feature dimension differs from the AE config");
  }

  DenormalGuard guard;
  TrainResult result;
  AEParams<float> params = init_kaiming<float>(ae_config);
  result.params = params;
  auto grads = Gradients<float>::zeros(params.feature_dim, params.d_ls);
  auto adam = AdamState<float>::zeros(params.feature_dim, params.d_ls);
  const std::size_t batch = static_cast<std::size_t>(train_config.batch_size);
  BatchWorkspace<float> workspace(params.feature_dim, params.d_ls, batch);
  PlateauScheduler scheduler(train_config);
  TrainReport& report = result.report;
  std::vector<std::span<const float>> bars;

  for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    const double lr = scheduler.lr();
    const auto order = epoch_order(tensor.num_bars(), train_config.seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += batch) {
        bars.clear();
        for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) {
          bars.push_back(tensor.bar(order[i]));
        }
        const float loss = workspace.loss_and_gradient(params, bars, grads, train_config.threads);
        if (!std::isfinite(loss)) throw Error(Errc::non_finite, "non-finite batch loss");
        adam_step(params, grads, adam, lr, train_config.beta1, train_config.beta2,
                  train_config.epsilon);
        loss_sum += loss;
        ++batches;
      }
    } catch (const Error& e) {
      if (e.code() != Errc::non_finite) throw;
      report.stop_reason = StopReason::diverged;
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(),
                             report);
    }
    const double epoch_loss = loss_sum / static_cast<double>(batches);
    report.loss_history.push_back(epoch_loss);
    report.lr_history.push_back(lr);

    const auto event = scheduler.observe(epoch_loss);
    if (event.improved) {
      result.params = params;
      report.best_epoch = epoch;
      report.best_loss = epoch_loss;
    }
    if (event.stop) {
      report.stop_reason = StopReason::early_stop;
      return result;
    }
  }
  report.stop_reason = StopReason::max_epochs;
  return result;
}

LatentMatrix encode_song(const AEParams<float>& params, const BarTensor& tensor) {
  if (tensor.feature_dim() != params.feature_dim) {
    throw Error(Errc::shape_mismatch, "tensor feature dimension differs from the parameters");
  }
  LatentMatrix Z(params.d_ls, static_cast<Eigen::Index>(tensor.num_bars()));
  BarTape<float> scratch;
  std::vector<float> z(params.d_ls);
  for (std::size_t b = 0; b < tensor.num_bars(); ++b) {
    encode_bar<float>(params, tensor.bar(b), scratch, z);
    for (int i = 0; i < params.d_ls; ++i) Z(i, static_cast<Eigen::Index>(b)) = z[i];
  }
  return Z;
}

}  // namespace barseg
