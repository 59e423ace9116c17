#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "barseg/audio_io.h"
#include "barseg/spectral.h"

namespace barseg {

inline constexpr int kFramesPerBar = 96;

/// Per-song stack of fixed-size bar matrices (96 frames x F bins), min-max
/// normalized to [0, 1] over the whole song.
///
/// Storage is row-major [bar][frame][bin]. When the feature dimension is not
/// a multiple of 4 it is zero-padded up to one; `source_dim` keeps the
/// original count.
class BarTensor {
 public:
  BarTensor() = default;
  BarTensor(std::size_t num_bars, int feature_dim, FeatureKind kind);

  std::size_t num_bars() const { return num_bars_; }
  int frames() const { return kFramesPerBar; }
  int feature_dim() const { return feature_dim_; }
  int source_dim() const { return source_dim_; }
  FeatureKind kind() const { return kind_; }
  std::size_t bar_size() const { return static_cast<std::size_t>(kFramesPerBar) * feature_dim_; }

  std::span<float> bar(std::size_t b) { return {data_.data() + b * bar_size(), bar_size()}; }
  std::span<const float> bar(std::size_t b) const {
    return {data_.data() + b * bar_size(), bar_size()};
  }
  float at(std::size_t b, int frame, int bin) const {
    return data_[b * bar_size() + static_cast<std::size_t>(frame) * feature_dim_ + bin];
  }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  /// Min and max of the raw features before normalization.
  float norm_min() const { return norm_min_; }
  float norm_max() const { return norm_max_; }

 private:
  friend BarTensor barwise_tensor(const Spectrogram&, const BarGrid&);
  friend BarTensor read_tensor(const std::filesystem::path&);

  std::size_t num_bars_ = 0;
  int feature_dim_ = 0;
  int source_dim_ = 0;
  FeatureKind kind_ = FeatureKind::log_mel;
  float norm_min_ = 0.0f;
  float norm_max_ = 0.0f;
  std::vector<float> data_;
};

/// Smallest multiple of 4 not below `dim`.
int padded_feature_dim(int dim);

/// Index of the spectrogram frame whose center is nearest to `time`; the
/// lower index wins a tie.
int nearest_frame(const Spectrogram& spec, double time);

/// The 96 frame indices sampled for bar b.
std::vector<int> bar_frame_indices(const Spectrogram& spec, const BarGrid& grid, std::size_t b);

/// Samples 96 equally spaced frames per bar and normalizes the song to [0, 1].
BarTensor barwise_tensor(const Spectrogram& spec, const BarGrid& grid);

/// Largest b with bar_starts[b] <= time.
std::size_t bar_index_of(double time, const BarGrid& grid);

/// Binary dump: "BSTN", u32 version, u32 bars, u32 frames, u32 F, u32 source F,
/// u32 feature kind, f32 norm min, f32 norm max, then row-major f32 data.
/// Little-endian throughout.
void write_tensor(const std::filesystem::path& path, const BarTensor& tensor);
BarTensor read_tensor(const std::filesystem::path& path);

}  // namespace barseg
