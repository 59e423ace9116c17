#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "barseg/ae_core.h"
#include "barseg/barwise.h"
#include "barseg/error.h"
#include "barseg/similarity.h"

namespace barseg {

struct TrainConfig {
  double lr0 = 1e-3;
  double lr_min = 1e-5;
  int plateau_patience = 20;
  double lr_divisor = 10.0;
  int early_stop_patience = 100;
  int max_epochs = 1000;
  int batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  /// Workers for batch-internal parallelism; 0 = hardware concurrency.
  int threads = 1;

  /// Throws Errc::invalid_argument when a field is out of range.
  void validate() const;
};

template <typename Real>
struct AdamState {
  Gradients<Real> first_moment;
  Gradients<Real> second_moment;
  std::int64_t step = 0;

  static AdamState zeros(int feature_dim, int d_ls) {
    return {Gradients<Real>::zeros(feature_dim, d_ls), Gradients<Real>::zeros(feature_dim, d_ls), 0};
  }
};

/// One bias-corrected Adam update in place. Throws Errc::non_finite on a
/// non-finite gradient (parameters are left untouched).
template <typename Real>
void adam_step(AEParams<Real>& params, const Gradients<Real>& grads, AdamState<Real>& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

enum class StopReason { early_stop, max_epochs, diverged };
std::string_view stop_reason_name(StopReason reason);

/// Reduce-on-plateau learning rate plus early stopping, both driven by the
/// running best epoch loss.
///
/// A plateau is `plateau_patience` consecutive epochs without a strict
/// improvement of the best loss; the rate is then divided by `lr_divisor`
/// (never below `lr_min`) and the plateau counter restarts. Training stops
/// after `early_stop_patience` epochs without improvement.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(const TrainConfig& config);

  struct Event {
    int epoch = 0;  // 1-based
    bool improved = false;
    bool lr_dropped = false;
    bool stop = false;
  };

  Event observe(double epoch_loss);

  double lr() const { return lr_; }
  double best_loss() const { return best_; }
  int epoch() const { return epoch_; }
  int epochs_since_best() const { return since_best_; }

 private:
  TrainConfig config_;
  double lr_;
  double best_;
  int epoch_ = 0;
  int since_best_ = 0;
  int plateau_ = 0;
};

struct TrainReport {
  std::vector<double> loss_history;
  std::vector<double> lr_history;  // rate used during each epoch
  StopReason stop_reason = StopReason::max_epochs;
  int best_epoch = 0;              // 1-based
  double best_loss = 0.0;
};

struct TrainResult {
  AEParams<float> params;  // from the best-loss epoch
  TrainReport report;
};

/// Raised when the loss becomes non-finite; carries the partial report.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& message, TrainReport partial)
      : Error(Errc::non_finite, message), report_(std::move(partial)) {}
  const TrainReport& report() const { return report_; }

 private:
  TrainReport report_;
};

/// Trains a fresh autoencoder on the bars of one song.
TrainResult train(const BarTensor& tensor, const AEConfig& ae_config,
                  const TrainConfig& train_config);

/// Latent vectors of every bar, d_ls x B.
LatentMatrix encode_song(const AEParams<float>& params, const BarTensor& tensor);

/// Seeded Fisher-Yates permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

}  // namespace barseg
