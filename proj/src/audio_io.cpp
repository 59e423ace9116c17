#include "barseg/audio_io.h"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "barseg/error.h"

namespace barseg {

static_assert(std::endian::native == std::endian::little,
              "WAV and tensor I/O assume a little-endian host");

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;
constexpr double kContiguityTolerance = 1e-3;

std::string read_file(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(Errc::file_not_found, "no such file: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
T read_le(const std::string& bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  const bool tabbed = line.find('\t') != std::string_view::npos;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t end = tabbed ? line.find('\t', pos) : line.find_first_of(" \t", pos);
    if (end == std::string_view::npos) end = line.size();
    auto field = trim(line.substr(pos, end - pos));
    if (tabbed || !field.empty()) fields.push_back(field);
    pos = end + 1;
  }
  return fields;
}

std::string parse_error(std::size_t line_no, const std::string& what) {
  return "line " + std::to_string(line_no) + ": " + what;
}

}  // namespace

BarGrid::BarGrid(std::vector<double> bar_starts, double song_end)
    : bar_starts_(std::move(bar_starts)), song_end_(song_end) {
  if (bar_starts_.size() < 2) {
    throw Error(Errc::too_few_entries, "bar grid needs at least 2 bars");
  }
  if (!(bar_starts_.front() >= 0.0)) {
    throw Error(Errc::out_of_range, "first bar starts before 0");
  }
  for (std::size_t i = 1; i < bar_starts_.size(); ++i) {
    if (!(bar_starts_[i] > bar_starts_[i - 1])) {
      throw Error(Errc::non_monotonic,
                  "bar starts not strictly increasing at index " + std::to_string(i));
    }
  }
  if (!(song_end_ > bar_starts_.back())) {
    throw Error(Errc::out_of_range, "song end must follow the last bar start");
  }
}

BarGrid BarGrid::uniform(std::size_t num_bars, double bar_seconds) {
  std::vector<double> starts(num_bars);
  for (std::size_t b = 0; b < num_bars; ++b) starts[b] = b * bar_seconds;
  return BarGrid(std::move(starts), num_bars * bar_seconds);
}

AudioBuffer load_wav(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 ||
      bytes.compare(8, 4, "WAVE") != 0) {
    throw Error(Errc::malformed_file, path.string() + ": not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t sample_rate = 0;
  bool have_fmt = false;
  std::size_t data_offset = 0, data_size = 0;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const auto size = read_le<std::uint32_t>(bytes, pos + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (id == "fmt ") {
      if (avail < 16) throw Error(Errc::malformed_file, "truncated fmt chunk");
      format = read_le<std::uint16_t>(bytes, body);
      channels = read_le<std::uint16_t>(bytes, body + 2);
      sample_rate = read_le<std::uint32_t>(bytes, body + 4);
      block_align = read_le<std::uint16_t>(bytes, body + 12);
      bits = read_le<std::uint16_t>(bytes, body + 14);
      if (format == kFormatExtensible) {
        if (avail < 40) throw Error(Errc::malformed_file, "truncated extensible fmt chunk");
        format = read_le<std::uint16_t>(bytes, body + 24);
      }
      have_fmt = true;
    } else if (id == "data") {
      data_offset = body;
      data_size = avail;
      have_data = true;
    }
    pos = body + size + (size & 1u);
  }

  if (!have_fmt || !have_data) {
    throw Error(Errc::malformed_file, path.string() + ": missing fmt or data chunk");
  }
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw Error(Errc::unsupported_codec,
                path.string() + ": unsupported codec (format " + std::to_string(format) +
                    ", " + std::to_string(bits) + " bits)");
  }
  if (channels == 0 || sample_rate == 0 || block_align != channels * (bits / 8)) {
    throw Error(Errc::malformed_file, path.string() + ": inconsistent fmt chunk");
  }
  const std::size_t frames = data_size / block_align;
  if (frames == 0) throw Error(Errc::empty_audio, path.string() + ": zero-length audio");

  AudioBuffer audio;
  audio.sample_rate = static_cast<int>(sample_rate);
  audio.samples.resize(frames);
  const char* data = bytes.data() + data_offset;
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const char* p = data + f * block_align + c * (bits / 8);
      if (pcm16) {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        acc += v / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += v;
      }
    }
    const float mono = channels == 1 ? static_cast<float>(acc)
                                     : static_cast<float>(acc / channels);
    if (!std::isfinite(mono)) {
      throw Error(Errc::non_finite, path.string() + ": non-finite sample at frame " +
                                        std::to_string(f));
    }
    audio.samples[f] = mono;
  }
  return audio;
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate, int channels, WavEncoding encoding) {
  if (channels <= 0 || samples.size() % channels != 0) {
    throw Error(Errc::invalid_argument, "sample count not a multiple of channel count");
  }
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t block_align = static_cast<std::uint16_t>(channels * bits / 8);
  const std::uint32_t data_size = static_cast<std::uint32_t>(samples.size() * (bits / 8));

  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put_le<std::uint32_t>(out, 36 + data_size);
  out += "WAVEfmt ";
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(channels));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate) * block_align);
  put_le<std::uint16_t>(out, block_align);
  put_le<std::uint16_t>(out, bits);
  out += "data";
  put_le<std::uint32_t>(out, data_size);
  for (float s : samples) {
    if (encoding == WavEncoding::pcm16) {
      const double scaled = std::round(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32768.0);
      put_le<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0)));
    } else {
      put_le<float>(out, s);
    }
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io_error, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(Errc::io_error, "short write to " + path.string());
}

BarGrid parse_bar_grid_text(const std::string& text, double song_duration) {
  std::vector<double> starts;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    const auto fields = split_fields(line);
    const auto t = parse_double(fields[0]);
    if (!t) throw Error(Errc::parse_error, parse_error(line_no, "unparsable time '" + std::string(fields[0]) + "'"));
    if (fields.size() >= 2) {
      const auto beat = parse_double(fields[1]);
      if (!beat) throw Error(Errc::parse_error, parse_error(line_no, "unparsable beat position"));
      if (*beat != 1.0) continue;
    }
    if (*t < 0.0 || *t > song_duration) {
      throw Error(Errc::out_of_range, parse_error(line_no, "time outside [0, song duration]"));
    }
    if (!starts.empty() && !(*t > starts.back())) {
      throw Error(Errc::non_monotonic, parse_error(line_no, "bar starts must strictly increase"));
    }
    starts.push_back(*t);
  }
  if (starts.size() < 2) {
    throw Error(Errc::too_few_entries, "bar grid needs at least 2 bars");
  }
  return BarGrid(std::move(starts), song_duration);
}

BarGrid parse_bar_grid(const std::filesystem::path& path, double song_duration) {
  try {
    return parse_bar_grid_text(read_file(path), song_duration);
  } catch (const Error& e) {
    if (e.code() == Errc::file_not_found || e.code() == Errc::io_error) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_bar_grid(const std::filesystem::path& path, const BarGrid& grid) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << std::setprecision(17);
  for (double t : grid.bar_starts()) out << t << '\n';
}

SegmentAnnotation parse_segments_text(const std::string& text) {
  SegmentAnnotation ann;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  double prev_end = 0.0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_fields(line);
    if (fields.size() < 2) {
      throw Error(Errc::parse_error, parse_error(line_no, "expected start, end and label"));
    }
    const auto start = parse_double(fields[0]);
    const auto end = parse_double(fields[1]);
    if (!start || !end) throw Error(Errc::parse_error, parse_error(line_no, "non-numeric time field"));
    if (!(*end > *start)) {
      throw Error(Errc::non_monotonic, parse_error(line_no, "segment end must follow its start"));
    }
    if (ann.boundaries.empty()) {
      ann.boundaries.push_back(*start);
    } else if (std::abs(*start - prev_end) > kContiguityTolerance) {
      throw Error(Errc::gap_or_overlap,
                  parse_error(line_no, "segment does not start where the previous one ended"));
    }
    ann.boundaries.push_back(*end);
    ann.labels.emplace_back(fields.size() >= 3 ? fields[2] : std::string_view{});
    prev_end = *end;
  }
  if (ann.boundaries.size() < 2) {
    throw Error(Errc::too_few_entries, "annotation holds no segment");
  }
  for (std::size_t i = 1; i < ann.boundaries.size(); ++i) {
    if (!(ann.boundaries[i] > ann.boundaries[i - 1])) {
      throw Error(Errc::non_monotonic, "annotation boundaries not strictly increasing");
    }
  }
  return ann;
}

SegmentAnnotation parse_segments(const std::filesystem::path& path) {
  try {
    return parse_segments_text(read_file(path));
  } catch (const Error& e) {
    if (e.code() == Errc::file_not_found || e.code() == Errc::io_error) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace barseg
