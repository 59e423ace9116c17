#include "barseg/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <utility>

#include "barseg/audio_io.h"
#include "barseg/barwise.h"
#include "barseg/error.h"
#include "barseg/export.h"
#include "barseg/parallel.h"
#include "json.hpp"

namespace barseg {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Rethrows library errors tagged with the pipeline stage that raised them.
template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (!e.stage().empty()) throw;
    throw Error(e.code(), stage, e.what());
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double selection_window(const std::vector<double>& windows) {
  return *std::max_element(windows.begin(), windows.end());
}

std::vector<HitRateScore> score_all(const std::vector<double>& est, const std::vector<double>& ref,
                                    const PipelineConfig& config) {
  std::vector<HitRateScore> out;
  for (double w : config.windows) out.push_back(hit_rate(est, ref, w, config.trim));
  return out;
}

json score_json(const HitRateScore& s) {
  json j;
  j["window"] = s.window;
  j["precision"] = s.precision;
  j["recall"] = s.recall;
  j["f_measure"] = s.f_measure;
  j["matched"] = s.matched;
  return j;
}

json config_json(const PipelineConfig& c) {
  json j;
  j["feature"] = feature_name(c.feature);
  j["d_ls"] = c.d_ls;
  j["mode"] = mode_name(c.mode);
  j["seed"] = c.seed;
  j["windows"] = c.windows;
  j["trim"] = c.trim;
  j["best_of_refs"] = c.best_of_refs;
  j["segmentation"] = {{"lambda", c.segmentation.lambda},
                       {"max_segment_bars", c.segmentation.max_segment_bars},
                       {"min_segment_bars", c.segmentation.min_segment_bars},
                       {"target_size", c.segmentation.target_size},
                       {"normalization_exponent", c.segmentation.normalization_exponent}};
  j["train"] = {{"lr0", c.train.lr0},
                {"lr_min", c.train.lr_min},
                {"plateau_patience", c.train.plateau_patience},
                {"lr_divisor", c.train.lr_divisor},
                {"early_stop_patience", c.train.early_stop_patience},
                {"max_epochs", c.train.max_epochs},
                {"batch_size", c.train.batch_size}};
  j["spectral"] = {{"n_fft", c.spectral.n_fft}, {"hop", c.spectral.hop}};
  return j;
}

json analysis_json(const SongAnalysis& a, bool include_timings) {
  json j;
  j["seed"] = a.seed;
  j["num_bars"] = a.num_bars;
  j["boundaries_sec"] = a.segmentation.boundaries_seconds;
  j["boundaries_bars"] = a.segmentation.boundaries_bars;
  j["score"] = a.segmentation.score;
  if (a.train_report) {
    j["epochs"] = a.train_report->loss_history.size();
    j["best_epoch"] = a.train_report->best_epoch;
    j["best_loss"] = a.train_report->best_loss;
    j["stop_reason"] = stop_reason_name(a.train_report->stop_reason);
  }
  if (!a.reference.empty()) j["reference"] = a.reference;
  json scores = json::array();
  for (const auto& s : a.scores) scores.push_back(score_json(s));
  j["scores"] = std::move(scores);
  if (include_timings) j["runtime_seconds"] = a.runtime_seconds;
  return j;
}

}  // namespace

std::string_view mode_name(PipelineMode mode) {
  return mode == PipelineMode::latent ? "latent" : "raw_feature";
}

PipelineMode parse_mode(std::string_view name) {
  if (name == "latent") return PipelineMode::latent;
  if (name == "raw" || name == "raw_feature") return PipelineMode::raw_feature;
  throw Error(Errc::invalid_argument, "unknown mode '" + std::string(name) + "'");
}

void PipelineConfig::validate() const {
  if (feature == FeatureKind::stft_power) {
    throw Error(Errc::invalid_argument, "pipeline features are chroma, mel, log_mel and mfcc");
  }
  if (d_ls < 1) throw Error(Errc::invalid_argument, "d_ls must be at least 1");
  if (windows.empty()) throw Error(Errc::invalid_argument, "at least one evaluation window is needed");
  for (double w : windows) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(Errc::invalid_argument, "windows must be non-negative");
  }
  segmentation.validate();
  train.validate();
}

std::uint64_t stem_hash(std::string_view stem) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stem) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t song_seed(std::uint64_t master_seed, std::string_view stem) {
  return master_seed + stem_hash(stem);
}

SongAnalysis analyze_song(const fs::path& audio_path, const fs::path& bars_path,
                          const std::vector<fs::path>& reference_paths,
                          const PipelineConfig& config, int threads, SongArtifacts* artifacts) {
  const auto t0 = std::chrono::steady_clock::now();
  run_stage("config", [&] { config.validate(); return 0; });

  SongAnalysis out;
  out.song = audio_path.stem().string();
  out.seed = song_seed(config.seed, out.song);

  const AudioBuffer audio = run_stage("load_audio", [&] { return load_wav(audio_path); });
  const BarGrid grid = run_stage("bar_grid", [&] { return parse_bar_grid(bars_path, audio.duration()); });
  const BarTensor tensor = run_stage("features", [&] {
    const Spectrogram spec = compute_feature(audio, config.feature, config.spectral);
    return barwise_tensor(spec, grid);
  });
  out.num_bars = tensor.num_bars();

  const bool want_raw = config.mode == PipelineMode::raw_feature || artifacts != nullptr;
  std::optional<Autosimilarity> raw;
  if (want_raw) raw = run_stage("similarity", [&] { return raw_feature_autosimilarity(tensor); });

  std::optional<Autosimilarity> latent;
  if (config.mode == PipelineMode::latent) {
    TrainResult trained = run_stage("train", [&] {
      AEConfig ae{config.d_ls, tensor.feature_dim(), out.seed};
      TrainConfig tc = config.train;
      tc.seed = splitmix64(out.seed);
      tc.threads = threads;
      return train(tensor, ae, tc);
    });
    out.train_report = std::move(trained.report);
    latent = run_stage("encode", [&] {
      return autosimilarity(encode_song(trained.params, tensor), true, SimilaritySource::latent);
    });
  }

  const Autosimilarity& A = config.mode == PipelineMode::latent ? *latent : *raw;
  out.segmentation = run_stage("segment", [&] {
    SegmentationResult r = dp_segment(A, config.segmentation);
    r.boundaries_seconds = boundaries_to_seconds(r.boundaries_bars, grid);
    return r;
  });

  run_stage("evaluate", [&] {
    const double sel = selection_window(config.windows);
    const std::size_t sel_index = static_cast<std::size_t>(
        std::find(config.windows.begin(), config.windows.end(), sel) - config.windows.begin());
    for (const auto& ref_path : reference_paths) {
      const SegmentAnnotation ref = parse_segments(ref_path);
      auto scores = score_all(out.segmentation.boundaries_seconds, ref.boundaries, config);
      if (out.scores.empty() || scores[sel_index].f_measure > out.scores[sel_index].f_measure) {
        out.scores = std::move(scores);
        out.reference = ref_path.filename().string();
      }
    }
    return 0;
  });

  if (artifacts) {
    artifacts->raw = std::move(*raw);
    artifacts->latent = std::move(latent);
    artifacts->train_report = out.train_report;
  }
  out.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::vector<CorpusSong> discover_corpus(const fs::path& dir, bool best_of_refs) {
  const fs::path audio_dir = dir / "audio";
  if (!fs::is_directory(audio_dir)) {
    throw Error(Errc::empty_corpus, "corpus", "no audio directory in " + dir.string());
  }
  std::vector<CorpusSong> songs;
  for (const auto& entry : fs::directory_iterator(audio_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".wav") continue;
    CorpusSong s;
    s.stem = entry.path().stem().string();
    s.audio = entry.path();
    s.bars = dir / "bars" / (s.stem + ".txt");
    songs.push_back(std::move(s));
  }
  if (songs.empty()) throw Error(Errc::empty_corpus, "corpus", "no .wav files in " + audio_dir.string());
  std::sort(songs.begin(), songs.end(), [](const auto& a, const auto& b) { return a.stem < b.stem; });

  std::vector<std::string> ref_names;
  if (fs::is_directory(dir / "refs")) {
    for (const auto& entry : fs::directory_iterator(dir / "refs")) {
      if (entry.is_regular_file() && entry.path().extension() == ".lab") {
        ref_names.push_back(entry.path().filename().string());
      }
    }
  }
  std::sort(ref_names.begin(), ref_names.end());
  auto is_own_ref = [&](const std::string& name) {
    return std::any_of(songs.begin(), songs.end(), [&](const auto& s) { return name == s.stem + ".lab"; });
  };
  for (auto& s : songs) {
    const std::string exact = s.stem + ".lab";
    if (std::binary_search(ref_names.begin(), ref_names.end(), exact)) {
      s.references.push_back(dir / "refs" / exact);
    }
    if (!best_of_refs) continue;
    // Alternative annotations are named <stem>.<tag>.lab.
    const std::string prefix = s.stem + ".";
    for (const auto& name : ref_names) {
      if (name != exact && name.starts_with(prefix) && !is_own_ref(name)) {
        s.references.push_back(dir / "refs" / name);
      }
    }
  }
  return songs;
}

std::vector<WindowMean> corpus_means(const std::vector<SongRecord>& songs,
                                     const std::vector<double>& windows) {
  std::vector<WindowMean> means;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    WindowMean m;
    m.window = windows[w];
    for (const auto& s : songs) {
      if (!s.ok || s.analysis.scores.size() <= w) continue;
      m.precision += s.analysis.scores[w].precision;
      m.recall += s.analysis.scores[w].recall;
      m.f_measure += s.analysis.scores[w].f_measure;
      ++m.songs;
    }
    if (m.songs > 0) {
      const auto n = static_cast<double>(m.songs);
      m.precision /= n;
      m.recall /= n;
      m.f_measure /= n;
    }
    means.push_back(m);
  }
  return means;
}

CorpusReport run_corpus(const fs::path& dir, const PipelineConfig& config, int jobs) {
  config.validate();
  const auto songs = discover_corpus(dir, config.best_of_refs);
  CorpusReport report;
  report.config = config;
  report.songs.resize(songs.size());
  // Songs run in parallel, each training single-threaded.
  parallel_for(songs.size(), jobs, [&](std::size_t i) {
    SongRecord& rec = report.songs[i];
    rec.stem = songs[i].stem;
    try {
      rec.analysis = analyze_song(songs[i].audio, songs[i].bars, songs[i].references, config, 1);
      rec.ok = true;
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.error = e.what();
    }
  });
  for (const auto& r : report.songs) report.failures += r.ok ? 0 : 1;
  report.means = corpus_means(report.songs, config.windows);
  return report;
}

std::string corpus_report_json(const CorpusReport& report, bool include_timings) {
  json j;
  j["config"] = config_json(report.config);
  json songs = json::array();
  for (const auto& s : report.songs) {
    json entry;
    entry["song"] = s.stem;
    entry["status"] = s.ok ? "ok" : "failed";
    if (s.ok) {
      entry.update(analysis_json(s.analysis, include_timings));
    } else {
      entry["error"] = s.error;
    }
    songs.push_back(std::move(entry));
  }
  j["songs"] = std::move(songs);
  json means = json::array();
  for (const auto& m : report.means) {
    means.push_back({{"window", m.window},
                     {"precision", m.precision},
                     {"recall", m.recall},
                     {"f_measure", m.f_measure},
                     {"songs", m.songs}});
  }
  j["means"] = std::move(means);
  j["failures"] = report.failures;
  return j.dump(2) + "\n";
}

std::string song_analysis_json(const SongAnalysis& analysis, const PipelineConfig& config) {
  json j;
  j["song"] = analysis.song;
  j["config"] = config_json(config);
  j.update(analysis_json(analysis, true));
  return j.dump(2) + "\n";
}

std::vector<SweepRow> sweep_latent(const fs::path& dir, const PipelineConfig& config,
                                   const std::vector<FeatureKind>& features,
                                   const std::vector<int>& d_ls_values, int jobs) {
  std::vector<SweepRow> rows;
  for (FeatureKind f : features) {
    for (int d : d_ls_values) {
      PipelineConfig c = config;
      c.mode = PipelineMode::latent;
      c.feature = f;
      c.d_ls = d;
      rows.push_back({f, d, run_corpus(dir, c, jobs).means});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::vector<double>& windows) {
  std::ostringstream out;
  out << "feature,d_ls";
  for (double w : windows) out << ",f@" << w;
  out << '\n' << std::setprecision(17);
  for (const auto& r : rows) {
    out << feature_name(r.feature) << ',' << r.d_ls;
    for (const auto& m : r.means) out << ',' << m.f_measure;
    out << '\n';
  }
  return out.str();
}

std::vector<fs::path> export_figures(const SongArtifacts& artifacts, const fs::path& out_dir,
                                     const std::string& prefix) {
  return run_stage("figures", [&] {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) {
      throw Error(Errc::io_error, "cannot create output directory " + out_dir.string());
    }
    std::vector<fs::path> written;
    auto heat = [&](const Autosimilarity& A, const std::string& name) {
      const fs::path pgm = out_dir / (prefix + "_" + name + ".pgm");
      const fs::path svg = out_dir / (prefix + "_" + name + ".svg");
      write_pgm(pgm, A.values);
      write_svg_heatmap(svg, A.values, prefix + " " + name + " autosimilarity");
      written.push_back(pgm);
      written.push_back(svg);
    };
    if (artifacts.raw.size() > 0) heat(artifacts.raw, "raw");
    if (artifacts.latent) heat(*artifacts.latent, "latent");
    if (artifacts.train_report) {
      const fs::path csv = out_dir / (prefix + "_loss.csv");
      write_loss_curve_csv(csv, *artifacts.train_report);
      written.push_back(csv);
    }
    if (written.empty()) throw Error(Errc::invalid_argument, "no artifacts to export");
    return written;
  });
}

}  // namespace barseg
