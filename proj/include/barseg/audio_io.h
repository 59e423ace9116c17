#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace barseg {

/// Mono audio. Multi-channel files are averaged at load time.
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = 0;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Bar (downbeat) positions of a song, in seconds.
///
/// Always holds at least two strictly increasing bar starts, the first at or
/// after 0, and a song end strictly after the last start. Bar b spans
/// [bar_start(b), bar_end(b)), where the last bar ends at the song end.
class BarGrid {
 public:
  BarGrid(std::vector<double> bar_starts, double song_end);

  /// `num_bars` bars of equal length starting at 0.
  static BarGrid uniform(std::size_t num_bars, double bar_seconds);

  std::span<const double> bar_starts() const { return bar_starts_; }
  double song_end() const { return song_end_; }
  std::size_t num_bars() const { return bar_starts_.size(); }
  double bar_start(std::size_t b) const { return bar_starts_.at(b); }
  double bar_end(std::size_t b) const {
    return b + 1 < bar_starts_.size() ? bar_starts_[b + 1] : song_end_;
  }

 private:
  std::vector<double> bar_starts_;
  double song_end_;
};

/// Reference structural annotation. Boundaries include the piece start and
/// end; labels are kept for completeness but unused downstream.
struct SegmentAnnotation {
  std::vector<double> boundaries;
  std::vector<std::string> labels;
};

AudioBuffer load_wav(const std::filesystem::path& path);

enum class WavEncoding { pcm16, float32 };

/// Writes interleaved samples. `samples.size()` must be a multiple of
/// `channels`.
void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate, int channels = 1,
               WavEncoding encoding = WavEncoding::float32);

/// Parses a bar-grid text file: one bar start time per line. Blank lines and
/// `#` comments are skipped. A second whitespace-separated column is read as
/// the beat position within the bar (downbeat tracker export); only rows
/// whose position is 1 are kept.
BarGrid parse_bar_grid(const std::filesystem::path& path, double song_duration);
BarGrid parse_bar_grid_text(const std::string& text, double song_duration);
void write_bar_grid(const std::filesystem::path& path, const BarGrid& grid);

/// Parses `start<TAB>end<TAB>label` lines. Segments must be contiguous within
/// 1 ms.
SegmentAnnotation parse_segments(const std::filesystem::path& path);
SegmentAnnotation parse_segments_text(const std::string& text);

}  // namespace barseg
