#include "barseg/spectral.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>

#include "barseg/error.h"

namespace barseg {

namespace {

// Plan creation in FFTW is not thread-safe; execution on new arrays is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Windowed real-to-complex transform of one frame at a time.
class FramePowerTransform {
 public:
  explicit FramePowerTransform(int n_fft)
      : n_fft_(n_fft), window_(hann_window(n_fft)) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n_fft));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n_fft / 2 + 1)));
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n_fft, in_, out_, FFTW_ESTIMATE);
  }
  ~FramePowerTransform() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  FramePowerTransform(const FramePowerTransform&) = delete;
  FramePowerTransform& operator=(const FramePowerTransform&) = delete;

  /// Writes n_fft/2 + 1 power values for the frame starting at `frame`.
  void power(const float* frame, std::span<double> out) {
    for (int n = 0; n < n_fft_; ++n) in_[n] = frame[n] * window_[n];
    fftw_execute(plan_);
    for (int k = 0; k <= n_fft_ / 2; ++k) {
      out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    }
  }

 private:
  int n_fft_;
  std::vector<double> window_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

void check_frame_params(const AudioBuffer& audio, int n_fft, int hop) {
  if (n_fft <= 0 || n_fft % 2 != 0) {
    throw Error(Errc::invalid_argument, "n_fft must be positive and even");
  }
  if (hop <= 0) throw Error(Errc::invalid_argument, "hop must be positive");
  if (audio.samples.size() < static_cast<std::size_t>(n_fft)) {
    throw Error(Errc::out_of_range, "audio shorter than one analysis frame");
  }
}

/// Calls fn(t, power) for every frame of the audio.
void for_each_power_frame(const AudioBuffer& audio, int n_fft, int hop,
                          const std::function<void(int, std::span<const double>)>& fn) {
  check_frame_params(audio, n_fft, hop);
  FramePowerTransform transform(n_fft);
  std::vector<double> power(n_fft / 2 + 1);
  const int frames = num_frames(audio.samples.size(), n_fft, hop);
  for (int t = 0; t < frames; ++t) {
    transform.power(audio.samples.data() + static_cast<std::size_t>(t) * hop, power);
    fn(t, power);
  }
}

Spectrogram like(const Spectrogram& src, FeatureKind kind, Eigen::Index rows) {
  Spectrogram out;
  out.kind = kind;
  out.n_fft = src.n_fft;
  out.hop = src.hop;
  out.sample_rate = src.sample_rate;
  out.values.resize(rows, src.values.cols());
  return out;
}

void require_kind(const Spectrogram& s, FeatureKind kind) {
  if (s.kind != kind) {
    throw Error(Errc::kind_mismatch, "expected a " + std::string(feature_name(kind)) +
                                         " spectrogram, got " +
                                         std::string(feature_name(s.kind)));
  }
}

/// Nonzero bin range of each Mel filter, for sparse application.
struct SparseFilters {
  std::vector<int> lo, hi;
  explicit SparseFilters(const MelFilterbank& bank) {
    const auto& w = bank.weights();
    for (Eigen::Index m = 0; m < w.rows(); ++m) {
      int first = static_cast<int>(w.cols()), last = -1;
      for (Eigen::Index k = 0; k < w.cols(); ++k) {
        if (w(m, k) != 0.0f) {
          first = std::min(first, static_cast<int>(k));
          last = static_cast<int>(k);
        }
      }
      lo.push_back(first);
      hi.push_back(last + 1);
    }
  }
  void apply(const MelFilterbank& bank, std::span<const double> power, float* out) const {
    const auto& w = bank.weights();
    for (std::size_t m = 0; m < lo.size(); ++m) {
      double acc = 0.0;
      for (int k = lo[m]; k < hi[m]; ++k) acc += w(static_cast<Eigen::Index>(m), k) * power[k];
      out[m] = static_cast<float>(acc);
    }
  }
};

std::vector<int> bin_pitch_classes(int sample_rate, int n_fft) {
  std::vector<int> pcs(n_fft / 2 + 1);
  for (int k = 0; k <= n_fft / 2; ++k) {
    pcs[k] = pitch_class_of(static_cast<double>(k) * sample_rate / n_fft);
  }
  return pcs;
}

}  // namespace

std::string_view feature_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::stft_power: return "stft_power";
    case FeatureKind::chroma: return "chroma";
    case FeatureKind::mel: return "mel";
    case FeatureKind::log_mel: return "log_mel";
    case FeatureKind::mfcc: return "mfcc";
  }
  return "unknown";
}

FeatureKind parse_feature(std::string_view name) {
  for (auto k : {FeatureKind::stft_power, FeatureKind::chroma, FeatureKind::mel,
                 FeatureKind::log_mel, FeatureKind::mfcc}) {
    if (feature_name(k) == name) return k;
  }
  if (name == "logmel") return FeatureKind::log_mel;
  throw Error(Errc::invalid_argument, "unknown feature '" + std::string(name) + "'");
}

int feature_dim(FeatureKind kind, int n_fft) {
  switch (kind) {
    case FeatureKind::stft_power: return n_fft / 2 + 1;
    case FeatureKind::chroma: return kChromaBins;
    case FeatureKind::mel:
    case FeatureKind::log_mel: return kMelBands;
    case FeatureKind::mfcc: return kMfccCoefficients;
  }
  return 0;
}

int num_frames(std::size_t num_samples, int n_fft, int hop) {
  if (num_samples < static_cast<std::size_t>(n_fft)) return 0;
  return 1 + static_cast<int>((num_samples - n_fft) / hop);
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

Spectrogram stft_power(const AudioBuffer& audio, int n_fft, int hop) {
  check_frame_params(audio, n_fft, hop);
  Spectrogram s;
  s.kind = FeatureKind::stft_power;
  s.n_fft = n_fft;
  s.hop = hop;
  s.sample_rate = audio.sample_rate;
  s.values.resize(n_fft / 2 + 1, num_frames(audio.samples.size(), n_fft, hop));
  for_each_power_frame(audio, n_fft, hop, [&](int t, std::span<const double> p) {
    for (std::size_t k = 0; k < p.size(); ++k) s.values(static_cast<Eigen::Index>(k), t) = static_cast<float>(p[k]);
  });
  return s;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank::MelFilterbank(int sample_rate, int n_fft)
    : sample_rate_(sample_rate), n_fft_(n_fft) {
  if (sample_rate <= 0 || n_fft <= 0) {
    throw Error(Errc::invalid_argument, "sample rate and n_fft must be positive");
  }
  if (kMelFmax > sample_rate / 2.0) {
    throw Error(Errc::out_of_range, "Mel f_max 16 kHz exceeds Nyquist at " +
                                        std::to_string(sample_rate) + " Hz");
  }
  const double mel_lo = hz_to_mel(kMelFmin);
  const double mel_hi = hz_to_mel(kMelFmax);
  edges_.resize(kMelBands + 2);
  for (int i = 0; i < kMelBands + 2; ++i) {
    edges_[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kMelBands + 1));
  }
  edges_.front() = kMelFmin;
  edges_.back() = kMelFmax;

  const int bins = n_fft / 2 + 1;
  weights_.setZero(kMelBands, bins);
  for (int m = 0; m < kMelBands; ++m) {
    bool any = false;
    for (int k = 0; k < bins; ++k) {
      const double w = response(m, static_cast<double>(k) * sample_rate / n_fft);
      weights_(m, k) = static_cast<float>(w);
      any = any || w > 0.0;
    }
    if (!any) {
      throw Error(Errc::invalid_argument,
                  "n_fft too small: Mel filter " + std::to_string(m) + " covers no FFT bin");
    }
  }
}

double MelFilterbank::response(int m, double hz) const {
  const double lo = edges_[m], center = edges_[m + 1], hi = edges_[m + 2];
  if (hz <= lo || hz >= hi) return 0.0;
  return hz <= center ? (hz - lo) / (center - lo) : (hi - hz) / (hi - center);
}

std::vector<double> MelFilterbank::center_frequencies() const {
  return {edges_.begin() + 1, edges_.end() - 1};
}

MelFilterbank build_mel_filterbank(int sample_rate, int n_fft) {
  return MelFilterbank(sample_rate, n_fft);
}

Spectrogram mel_spectrogram(const AudioBuffer& audio, int n_fft, int hop) {
  check_frame_params(audio, n_fft, hop);
  const MelFilterbank bank(audio.sample_rate, n_fft);
  const SparseFilters sparse(bank);
  Spectrogram s;
  s.kind = FeatureKind::mel;
  s.n_fft = n_fft;
  s.hop = hop;
  s.sample_rate = audio.sample_rate;
  s.values.resize(kMelBands, num_frames(audio.samples.size(), n_fft, hop));
  for_each_power_frame(audio, n_fft, hop, [&](int t, std::span<const double> p) {
    sparse.apply(bank, p, s.values.col(t).data());
  });
  return s;
}

Spectrogram mel_spectrogram(const Spectrogram& stft, const MelFilterbank& bank) {
  require_kind(stft, FeatureKind::stft_power);
  if (stft.num_bins() != bank.weights().cols() || stft.sample_rate != bank.sample_rate()) {
    throw Error(Errc::shape_mismatch, "filterbank does not match the STFT");
  }
  Spectrogram out = like(stft, FeatureKind::mel, kMelBands);
  out.values = (bank.weights().cast<double>() * stft.values.cast<double>()).cast<float>();
  return out;
}

double default_log_floor(const Spectrogram& mel, double relative) {
  const double peak = mel.values.size() ? static_cast<double>(mel.values.maxCoeff()) : 0.0;
  return peak > 0.0 ? relative * peak : relative;
}

Spectrogram log_mel(const Spectrogram& mel, double floor) {
  require_kind(mel, FeatureKind::mel);
  if (!(floor > 0.0) || !std::isfinite(floor)) {
    throw Error(Errc::invalid_argument, "log floor must be positive");
  }
  Spectrogram out = like(mel, FeatureKind::log_mel, mel.values.rows());
  const double offset = std::log10(floor);
  for (Eigen::Index i = 0; i < mel.values.size(); ++i) {
    const double v = std::max(static_cast<double>(mel.values.data()[i]), floor);
    out.values.data()[i] = static_cast<float>(std::log10(v) - offset);
  }
  return out;
}

Eigen::MatrixXd dct2_matrix(int rows, int n) {
  Eigen::MatrixXd d(rows, n);
  for (int k = 0; k < rows; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) {
      d(k, i) = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
    }
  }
  return d;
}

Spectrogram mfcc(const Spectrogram& log_mel_spec) {
  require_kind(log_mel_spec, FeatureKind::log_mel);
  const int n = static_cast<int>(log_mel_spec.values.rows());
  if (n < kMfccCoefficients) {
    throw Error(Errc::shape_mismatch, "log-Mel spectrogram has fewer than 32 bands");
  }
  Spectrogram out = like(log_mel_spec, FeatureKind::mfcc, kMfccCoefficients);
  out.values = (dct2_matrix(kMfccCoefficients, n) * log_mel_spec.values.cast<double>()).cast<float>();
  return out;
}

int pitch_class_of(double hz) {
  if (!(hz >= kChromaFmin)) return -1;
  const long midi = std::lround(69.0 + 12.0 * std::log2(hz / 440.0));
  return static_cast<int>(((midi % 12) + 12) % 12);
}

Spectrogram chromagram(const Spectrogram& stft) {
  require_kind(stft, FeatureKind::stft_power);
  Spectrogram out = like(stft, FeatureKind::chroma, kChromaBins);
  const auto pcs = bin_pitch_classes(stft.sample_rate, stft.n_fft);
  if (static_cast<int>(pcs.size()) != stft.num_bins()) {
    throw Error(Errc::shape_mismatch, "STFT bin count does not match n_fft");
  }
  for (int t = 0; t < stft.num_frames(); ++t) {
    double acc[kChromaBins] = {};
    for (int k = 0; k < stft.num_bins(); ++k) {
      if (pcs[k] >= 0) acc[pcs[k]] += stft.values(k, t);
    }
    for (int c = 0; c < kChromaBins; ++c) out.values(c, t) = static_cast<float>(acc[c]);
  }
  return out;
}

Spectrogram chromagram(const AudioBuffer& audio, int n_fft, int hop) {
  check_frame_params(audio, n_fft, hop);
  const auto pcs = bin_pitch_classes(audio.sample_rate, n_fft);
  Spectrogram s;
  s.kind = FeatureKind::chroma;
  s.n_fft = n_fft;
  s.hop = hop;
  s.sample_rate = audio.sample_rate;
  s.values.resize(kChromaBins, num_frames(audio.samples.size(), n_fft, hop));
  for_each_power_frame(audio, n_fft, hop, [&](int t, std::span<const double> p) {
    double acc[kChromaBins] = {};
    for (std::size_t k = 0; k < p.size(); ++k) {
      // Round through float so the streaming path matches chromagram(stft).
      if (pcs[k] >= 0) acc[pcs[k]] += static_cast<float>(p[k]);
    }
    for (int c = 0; c < kChromaBins; ++c) s.values(c, t) = static_cast<float>(acc[c]);
  });
  return s;
}

Spectrogram compute_feature(const AudioBuffer& audio, FeatureKind kind,
                            const SpectralConfig& config) {
  switch (kind) {
    case FeatureKind::stft_power: return stft_power(audio, config.n_fft, config.hop);
    case FeatureKind::chroma: return chromagram(audio, config.n_fft, config.hop);
    case FeatureKind::mel: return mel_spectrogram(audio, config.n_fft, config.hop);
    case FeatureKind::log_mel:
    case FeatureKind::mfcc: {
      const auto mel = mel_spectrogram(audio, config.n_fft, config.hop);
      auto lm = log_mel(mel, default_log_floor(mel, config.relative_log_floor));
      return kind == FeatureKind::log_mel ? lm : mfcc(lm);
    }
  }
  throw Error(Errc::invalid_argument, "unknown feature kind");
}

}  // namespace barseg
