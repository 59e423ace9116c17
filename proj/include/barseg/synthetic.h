#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "barseg/audio_io.h"

namespace barseg {

/// A song built from alternating sine-chord textures, with its bar grid and
/// the section boundaries implied by the construction.
struct SyntheticSong {
  AudioBuffer audio;
  BarGrid grid = BarGrid::uniform(2, 1.0);
  std::vector<double> boundaries;  // seconds, including 0 and the end
};

struct SyntheticSongSpec {
  int num_bars = 64;
  int bars_per_section = 8;
  double bar_seconds = 2.0;
  int sample_rate = 32000;
  /// Chord partials (Hz) of each texture; sections cycle through them.
  std::vector<std::vector<double>> textures = {{220.0, 277.5, 330.0},
                                               {2640.0, 3330.0, 3960.0}};
  float amplitude = 0.25f;
};

SyntheticSong make_synthetic_song(const SyntheticSongSpec& spec = {});

/// Writes `<dir>/audio/<stem>.wav`, `<dir>/bars/<stem>.txt` and
/// `<dir>/refs/<stem>.lab` in the corpus layout.
void write_synthetic_song(const std::filesystem::path& dir, const std::string& stem,
                          const SyntheticSong& song);

}  // namespace barseg
