#include "barseg/synthetic.h"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "barseg/error.h"

namespace barseg {

SyntheticSong make_synthetic_song(const SyntheticSongSpec& spec) {
  if (spec.num_bars < 2 || spec.bars_per_section < 1 || !(spec.bar_seconds > 0.0) ||
      spec.sample_rate < 1 || spec.textures.empty()) {
    throw Error(Errc::invalid_argument, "invalid synthetic song description");
  }
  const auto samples_per_bar = static_cast<std::size_t>(std::llround(spec.bar_seconds * spec.sample_rate));
  const double bar_seconds = static_cast<double>(samples_per_bar) / spec.sample_rate;
  const std::size_t total = samples_per_bar * static_cast<std::size_t>(spec.num_bars);

  SyntheticSong song;
  song.audio.sample_rate = spec.sample_rate;
  song.audio.samples.assign(total, 0.0f);
  for (int b = 0; b < spec.num_bars; ++b) {
    const auto& chord = spec.textures[static_cast<std::size_t>(b / spec.bars_per_section) % spec.textures.size()];
    const float gain = spec.amplitude / static_cast<float>(std::max<std::size_t>(chord.size(), 1));
    for (std::size_t k = 0; k < samples_per_bar; ++k) {
      const std::size_t n = static_cast<std::size_t>(b) * samples_per_bar + k;
      const double t = static_cast<double>(n) / spec.sample_rate;
      double v = 0.0;
      for (double f : chord) v += std::sin(2.0 * std::numbers::pi * f * t);
      song.audio.samples[n] = gain * static_cast<float>(v);
    }
  }
  song.grid = BarGrid::uniform(static_cast<std::size_t>(spec.num_bars), bar_seconds);
  for (int b = 0; b < spec.num_bars; b += spec.bars_per_section) song.boundaries.push_back(b * bar_seconds);
  song.boundaries.push_back(spec.num_bars * bar_seconds);
  return song;
}

void write_synthetic_song(const std::filesystem::path& dir, const std::string& stem,
                          const SyntheticSong& song) {
  for (const char* sub : {"audio", "bars", "refs"}) std::filesystem::create_directories(dir / sub);
  write_wav(dir / "audio" / (stem + ".wav"), song.audio.samples, song.audio.sample_rate);
  write_bar_grid(dir / "bars" / (stem + ".txt"), song.grid);
  std::ofstream lab(dir / "refs" / (stem + ".lab"));
  if (!lab) throw Error(Errc::io_error, "cannot write reference for " + stem);
  lab << std::setprecision(17);
  for (std::size_t i = 1; i < song.boundaries.size(); ++i) {
    lab << song.boundaries[i - 1] << '\t' << song.boundaries[i] << '\t'
        << static_cast<char>('A' + (i - 1) % 2) << '\n';
  }
}

}  // namespace barseg
