#pragma once

#include <Eigen/Core>
#include <string_view>
#include <vector>

#include "barseg/audio_io.h"

namespace barseg {

enum class FeatureKind { stft_power, chroma, mel, log_mel, mfcc };

std::string_view feature_name(FeatureKind kind);
FeatureKind parse_feature(std::string_view name);

/// Number of feature rows produced for a kind (STFT depends on n_fft).
int feature_dim(FeatureKind kind, int n_fft = 2048);

inline constexpr int kMelBands = 80;
inline constexpr double kMelFmin = 80.0;
inline constexpr double kMelFmax = 16000.0;
inline constexpr int kMfccCoefficients = 32;
inline constexpr int kChromaBins = 12;
inline constexpr double kChromaFmin = 27.5;

struct SpectralConfig {
  int n_fft = 2048;
  int hop = 32;
  /// Log floor relative to the song's maximum Mel power.
  double relative_log_floor = 1e-10;
};

/// Feature matrix, one column per analysis frame (F x T).
///
/// Frame t covers samples [t*hop, t*hop + n_fft); its center lies at
/// (t*hop + n_fft/2) / sample_rate seconds.
struct Spectrogram {
  Eigen::MatrixXf values;
  FeatureKind kind = FeatureKind::stft_power;
  int n_fft = 0;
  int hop = 0;
  int sample_rate = 0;

  int num_bins() const { return static_cast<int>(values.rows()); }
  int num_frames() const { return static_cast<int>(values.cols()); }
  double frame_center(int t) const {
    return (static_cast<double>(t) * hop + n_fft / 2.0) / sample_rate;
  }
};

/// Number of frames that fit entirely inside `num_samples` samples.
int num_frames(std::size_t num_samples, int n_fft, int hop);

/// Periodic Hann window.
std::vector<double> hann_window(int n);

/// Power spectrogram |DFT(w * frame)|^2, F = n_fft/2 + 1, no padding.
Spectrogram stft_power(const AudioBuffer& audio, int n_fft, int hop);

/// 80 triangular Mel filters over [80 Hz, 16 kHz], HTK Mel scale, peak 1.
class MelFilterbank {
 public:
  MelFilterbank(int sample_rate, int n_fft);

  const Eigen::MatrixXf& weights() const { return weights_; }
  int sample_rate() const { return sample_rate_; }
  int n_fft() const { return n_fft_; }
  /// The 82 band edges (Hz): filter m rises from edge m, peaks at m+1 and
  /// falls to m+2.
  const std::vector<double>& edges() const { return edges_; }
  std::vector<double> center_frequencies() const;
  /// Continuous triangle response of filter m at frequency hz.
  double response(int m, double hz) const;

 private:
  int sample_rate_;
  int n_fft_;
  std::vector<double> edges_;
  Eigen::MatrixXf weights_;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

MelFilterbank build_mel_filterbank(int sample_rate, int n_fft);

/// Mel power spectrogram. Frames are reduced one at a time so the full STFT
/// is never materialized.
Spectrogram mel_spectrogram(const AudioBuffer& audio, int n_fft, int hop);
Spectrogram mel_spectrogram(const Spectrogram& stft, const MelFilterbank& bank);

/// log10(max(mel, floor)) - log10(floor); non-negative.
Spectrogram log_mel(const Spectrogram& mel, double floor);

/// `relative` times the largest Mel power, or `relative` itself for silence.
double default_log_floor(const Spectrogram& mel, double relative = 1e-10);

/// Orthonormal DCT-II matrix, first `rows` basis vectors of length n.
Eigen::MatrixXd dct2_matrix(int rows, int n);

/// First 32 orthonormal DCT-II coefficients of each log-Mel column.
Spectrogram mfcc(const Spectrogram& log_mel_spec);

/// Pitch class (C=0 ... B=11) of the equal-tempered pitch nearest to hz
/// (A4 = 440 Hz), or -1 below 27.5 Hz.
int pitch_class_of(double hz);

/// Power summed per nearest pitch class.
Spectrogram chromagram(const Spectrogram& stft);
Spectrogram chromagram(const AudioBuffer& audio, int n_fft, int hop);

/// Computes any of the four features directly from audio.
Spectrogram compute_feature(const AudioBuffer& audio, FeatureKind kind,
                            const SpectralConfig& config = {});

}  // namespace barseg
