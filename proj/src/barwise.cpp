#include "barseg/barwise.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "barseg/error.h"

namespace barseg {

namespace {

constexpr char kTensorMagic[4] = {'B', 'S', 'T', 'N'};
constexpr std::uint32_t kTensorVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(Errc::malformed_file, "truncated tensor file");
  return v;
}

}  // namespace

BarTensor::BarTensor(std::size_t num_bars, int feature_dim, FeatureKind kind)
    : num_bars_(num_bars),
      feature_dim_(padded_feature_dim(feature_dim)),
      source_dim_(feature_dim),
      kind_(kind),
      data_(num_bars * kFramesPerBar * static_cast<std::size_t>(padded_feature_dim(feature_dim)), 0.0f) {
  if (feature_dim <= 0) throw Error(Errc::invalid_argument, "feature dimension must be positive");
}

int padded_feature_dim(int dim) { return (dim + 3) / 4 * 4; }

int nearest_frame(const Spectrogram& spec, double time) {
  const int frames = spec.num_frames();
  const double x = (time * spec.sample_rate - spec.n_fft / 2.0) / spec.hop;
  const int base = static_cast<int>(std::floor(std::clamp(x, 0.0, frames - 1.0)));
  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int t = std::max(0, base - 1); t <= std::min(frames - 1, base + 2); ++t) {
    const double d = std::abs(spec.frame_center(t) - time);
    if (d < best_dist) {
      best_dist = d;
      best = t;
    }
  }
  return best;
}

std::vector<int> bar_frame_indices(const Spectrogram& spec, const BarGrid& grid, std::size_t b) {
  const double start = grid.bar_start(b);
  const double length = grid.bar_end(b) - start;
  std::vector<int> idx(kFramesPerBar);
  for (int k = 0; k < kFramesPerBar; ++k) {
    idx[k] = nearest_frame(spec, start + k * length / kFramesPerBar);
  }
  return idx;
}

BarTensor barwise_tensor(const Spectrogram& spec, const BarGrid& grid) {
  if (spec.num_frames() == 0 || spec.hop <= 0 || spec.sample_rate <= 0) {
    throw Error(Errc::invalid_argument, "empty spectrogram");
  }
  const double hop_seconds = static_cast<double>(spec.hop) / spec.sample_rate;
  const double covered =
      (static_cast<double>(spec.num_frames() - 1) * spec.hop + spec.n_fft) / spec.sample_rate;
  if (grid.song_end() > covered + hop_seconds + 1e-9) {
    throw Error(Errc::out_of_range, "bar grid extends past the spectrogram");
  }
  for (std::size_t b = 0; b < grid.num_bars(); ++b) {
    if (grid.bar_end(b) - grid.bar_start(b) < hop_seconds) {
      throw Error(Errc::out_of_range, "bar " + std::to_string(b) + " is shorter than one hop");
    }
  }

  const int dim = spec.num_bins();
  BarTensor tensor(grid.num_bars(), dim, spec.kind);
  const int padded = tensor.feature_dim();
  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (std::size_t b = 0; b < grid.num_bars(); ++b) {
    const auto cols = bar_frame_indices(spec, grid, b);
    auto bar = tensor.bar(b);
    for (int k = 0; k < kFramesPerBar; ++k) {
      for (int f = 0; f < dim; ++f) {
        const float v = spec.values(f, cols[k]);
        if (!std::isfinite(v)) throw Error(Errc::non_finite, "non-finite spectrogram value");
        bar[static_cast<std::size_t>(k) * padded + f] = v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }

  tensor.norm_min_ = lo;
  tensor.norm_max_ = hi;
  const double range = static_cast<double>(hi) - lo;
  for (std::size_t b = 0; b < grid.num_bars(); ++b) {
    auto bar = tensor.bar(b);
    for (int k = 0; k < kFramesPerBar; ++k) {
      for (int f = 0; f < dim; ++f) {
        float& v = bar[static_cast<std::size_t>(k) * padded + f];
        v = range > 0.0 ? static_cast<float>(std::clamp((v - static_cast<double>(lo)) / range, 0.0, 1.0))
                        : 0.0f;
      }
    }
  }
  return tensor;
}

std::size_t bar_index_of(double time, const BarGrid& grid) {
  if (!(time >= 0.0) || time > grid.song_end()) {
    throw Error(Errc::out_of_range, "time outside the song");
  }
  const auto starts = grid.bar_starts();
  const auto it = std::upper_bound(starts.begin(), starts.end(), time);
  if (it == starts.begin()) {
    throw Error(Errc::out_of_range, "time precedes the first bar");
  }
  return static_cast<std::size_t>(it - starts.begin()) - 1;
}

void write_tensor(const std::filesystem::path& path, const BarTensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.write(kTensorMagic, 4);
  write_pod<std::uint32_t>(out, kTensorVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.num_bars()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.frames()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.feature_dim()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.source_dim()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.kind()));
  write_pod<float>(out, tensor.norm_min());
  write_pod<float>(out, tensor.norm_max());
  const auto data = tensor.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw Error(Errc::io_error, "short write to " + path.string());
}

BarTensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::file_not_found, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw Error(Errc::malformed_file, path.string() + ": not a bar tensor file");
  }
  if (read_pod<std::uint32_t>(in) != kTensorVersion) {
    throw Error(Errc::malformed_file, path.string() + ": unsupported tensor version");
  }
  const auto bars = read_pod<std::uint32_t>(in);
  const auto frames = read_pod<std::uint32_t>(in);
  const auto dim = read_pod<std::uint32_t>(in);
  const auto source = read_pod<std::uint32_t>(in);
  const auto kind = read_pod<std::uint32_t>(in);
  if (frames != kFramesPerBar || dim != static_cast<std::uint32_t>(padded_feature_dim(static_cast<int>(source))) ||
      kind > static_cast<std::uint32_t>(FeatureKind::mfcc)) {
    throw Error(Errc::malformed_file, path.string() + ": inconsistent tensor header");
  }
  BarTensor t(bars, static_cast<int>(source), static_cast<FeatureKind>(kind));
  t.norm_min_ = read_pod<float>(in);
  t.norm_max_ = read_pod<float>(in);
  in.read(reinterpret_cast<char*>(t.data_.data()),
          static_cast<std::streamsize>(t.data_.size() * sizeof(float)));
  if (!in) throw Error(Errc::malformed_file, path.string() + ": truncated tensor data");
  return t;
}

}  // namespace barseg
