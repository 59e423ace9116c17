#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "barseg/ae_core.h"
#include "barseg/evalmetrics.h"
#include "barseg/segmentation.h"
#include "barseg/similarity.h"
#include "barseg/spectral.h"
#include "barseg/trainer.h"

namespace barseg {

enum class PipelineMode { latent, raw_feature };
std::string_view mode_name(PipelineMode mode);
PipelineMode parse_mode(std::string_view name);

struct PipelineConfig {
  FeatureKind feature = FeatureKind::log_mel;
  int d_ls = 32;
  PipelineMode mode = PipelineMode::latent;
  SegmentationConfig segmentation;
  TrainConfig train;  // its seed is replaced by the per-song seed
  SpectralConfig spectral;
  std::uint64_t seed = 0;
  std::vector<double> windows = {0.5, 3.0};
  bool trim = false;
  /// Score against every available reference and keep the best F at the
  /// largest window.
  bool best_of_refs = false;

  void validate() const;
};

/// Stable 64-bit FNV-1a hash of a song stem.
std::uint64_t stem_hash(std::string_view stem);
/// Master seed plus the stem hash (wrapping).
std::uint64_t song_seed(std::uint64_t master_seed, std::string_view stem);

struct SongAnalysis {
  std::string song;
  std::uint64_t seed = 0;
  std::size_t num_bars = 0;
  SegmentationResult segmentation;
  std::vector<HitRateScore> scores;  // one per window; empty without reference
  std::string reference;             // file name of the scored reference
  std::optional<TrainReport> train_report;
  double runtime_seconds = 0.0;
};

/// Intermediate results kept for figures.
struct SongArtifacts {
  Autosimilarity raw;
  std::optional<Autosimilarity> latent;
  std::optional<TrainReport> train_report;
};

/// Feature extraction, bar alignment, optional training and encoding,
/// autosimilarity, segmentation and (with references) scoring. Errors are
/// rethrown with the failing stage as their tag. `threads` is used for
/// training only.
SongAnalysis analyze_song(const std::filesystem::path& audio_path,
                          const std::filesystem::path& bars_path,
                          const std::vector<std::filesystem::path>& reference_paths,
                          const PipelineConfig& config, int threads = 1,
                          SongArtifacts* artifacts = nullptr);

struct CorpusSong {
  std::string stem;
  std::filesystem::path audio;
  std::filesystem::path bars;
  std::vector<std::filesystem::path> references;
};

/// Songs of a corpus directory (`audio/*.wav`, `bars/<stem>.txt`,
/// `refs/<stem>.lab`), sorted by stem. Throws Errc::empty_corpus when there
/// is no audio.
std::vector<CorpusSong> discover_corpus(const std::filesystem::path& dir, bool best_of_refs);

struct SongRecord {
  std::string stem;
  bool ok = false;
  std::string error;
  SongAnalysis analysis;
};

struct WindowMean {
  double window = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  std::size_t songs = 0;
};

struct CorpusReport {
  PipelineConfig config;
  std::vector<SongRecord> songs;  // sorted by stem
  std::vector<WindowMean> means;  // unweighted over scored songs
  std::size_t failures = 0;
};

/// Runs analyze_song over a corpus with `jobs` workers (0 = all cores). A
/// failing song is recorded and does not stop the run.
CorpusReport run_corpus(const std::filesystem::path& dir, const PipelineConfig& config,
                        int jobs = 0);

/// Unweighted mean of per-song scores.
std::vector<WindowMean> corpus_means(const std::vector<SongRecord>& songs,
                                     const std::vector<double>& windows);

/// JSON report. Timings are left out unless asked for, so that reports of
/// identical runs are byte-identical.
std::string corpus_report_json(const CorpusReport& report, bool include_timings = false);
std::string song_analysis_json(const SongAnalysis& analysis, const PipelineConfig& config);

struct SweepRow {
  FeatureKind feature = FeatureKind::log_mel;
  int d_ls = 0;
  std::vector<WindowMean> means;
};

/// Latent-mode corpus runs for every (feature, d_ls) pair.
std::vector<SweepRow> sweep_latent(const std::filesystem::path& dir, const PipelineConfig& config,
                                   const std::vector<FeatureKind>& features,
                                   const std::vector<int>& d_ls_values, int jobs = 0);

/// feature,d_ls,f@<w>... rows.
std::string sweep_csv(const std::vector<SweepRow>& rows, const std::vector<double>& windows);

/// Raw and latent autosimilarity heat maps (PGM and SVG) and the loss curve
/// CSV. Returns the written paths.
std::vector<std::filesystem::path> export_figures(const SongArtifacts& artifacts,
                                                  const std::filesystem::path& out_dir,
                                                  const std::string& prefix = "song");

}  // namespace barseg
