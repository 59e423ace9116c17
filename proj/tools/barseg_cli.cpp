// Command-line front end: analyze one song, run or sweep a corpus, export figures.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "barseg/error.h"
#include "barseg/export.h"
#include "barseg/parallel.h"
#include "barseg/pipeline.h"
#include "barseg/synthetic.h"

namespace fs = std::filesystem;
using namespace barseg;

namespace {

struct CommonOptions {
  std::string feature = "log_mel";
  int d_ls = 32;
  std::string mode = "latent";
  double lambda = 0.5;
  int max_seg = 36;
  std::uint64_t seed = 0;
  int jobs = 0;
  std::vector<double> windows = {0.5, 3.0};
  bool trim = false;
  bool best_of_refs = false;
  int max_epochs = 1000;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_feature = true) {
  if (with_feature) {
    cmd->add_option("--feature", o.feature, "chroma, mel, log_mel or mfcc")->capture_default_str();
    cmd->add_option("--dls", o.d_ls, "latent dimension")->capture_default_str();
  }
  cmd->add_option("--mode", o.mode, "latent or raw")->capture_default_str();
  cmd->add_option("--lambda", o.lambda, "regularity penalty weight")->capture_default_str();
  cmd->add_option("--max-seg", o.max_seg, "maximum segment length in bars")->capture_default_str();
  cmd->add_option("--seed", o.seed, "master seed")->capture_default_str();
  cmd->add_option("--jobs", o.jobs, "worker threads (0 = all cores)")->capture_default_str();
  cmd->add_option("--window", o.windows, "hit-rate windows in seconds")->delimiter(',')->capture_default_str();
  cmd->add_flag("--trim", o.trim, "ignore the first and last boundary when scoring");
  cmd->add_flag("--best-of-refs", o.best_of_refs, "keep the best-scoring of several references");
  cmd->add_option("--epochs", o.max_epochs, "maximum training epochs")->capture_default_str();
}

PipelineConfig make_config(const CommonOptions& o) {
  PipelineConfig c;
  c.feature = parse_feature(o.feature);
  c.d_ls = o.d_ls;
  c.mode = parse_mode(o.mode);
  c.segmentation.lambda = o.lambda;
  c.segmentation.max_segment_bars = o.max_seg;
  c.seed = o.seed;
  c.windows = o.windows;
  c.trim = o.trim;
  c.best_of_refs = o.best_of_refs;
  c.train.max_epochs = o.max_epochs;
  c.validate();
  return c;
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_text(out, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bar-level music structure segmentation with single-song autoencoders"};
  app.require_subcommand(1);

  CommonOptions analyze_opts;
  std::string audio, bars, out, seg_out;
  std::vector<std::string> refs;
  auto* analyze = app.add_subcommand("analyze", "segment one song");
  analyze->add_option("audio", audio, "WAV file")->required()->check(CLI::ExistingFile);
  analyze->add_option("bars", bars, "bar grid (one downbeat time per line)")->required();
  analyze->add_option("--ref", refs, "reference annotation(s) to score against");
  analyze->add_option("--out", out, "JSON output file (default stdout)");
  analyze->add_option("--segments", seg_out, "write segments as start<TAB>end lines");
  add_common(analyze, analyze_opts);

  CommonOptions corpus_opts;
  std::string corpus_dir, corpus_out;
  bool timings = false;
  auto* corpus = app.add_subcommand("corpus", "analyze and score a corpus directory");
  corpus->add_option("dir", corpus_dir, "directory with audio/, bars/ and refs/")->required();
  corpus->add_option("--out", corpus_out, "JSON report file (default stdout)");
  corpus->add_flag("--timings", timings, "include per-song runtimes in the report");
  add_common(corpus, corpus_opts);

  CommonOptions sweep_opts;
  std::string sweep_dir, sweep_out;
  std::vector<std::string> sweep_features = {"log_mel"};
  std::vector<int> sweep_dls = {16, 32};
  auto* sweep = app.add_subcommand("sweep", "mean F per feature and latent dimension");
  sweep->add_option("dir", sweep_dir, "corpus directory")->required();
  sweep->add_option("--feature", sweep_features, "features to sweep")->delimiter(',')->capture_default_str();
  sweep->add_option("--dls", sweep_dls, "latent dimensions to sweep")->delimiter(',')->capture_default_str();
  sweep->add_option("--out", sweep_out, "CSV output file (default stdout)");
  add_common(sweep, sweep_opts, false);

  CommonOptions fig_opts;
  std::string fig_audio, fig_bars, fig_dir = "figures";
  auto* figures = app.add_subcommand("figures", "autosimilarity heat maps and loss curve");
  figures->add_option("audio", fig_audio, "WAV file")->required()->check(CLI::ExistingFile);
  figures->add_option("bars", fig_bars, "bar grid")->required();
  figures->add_option("--out", fig_dir, "output directory")->capture_default_str();
  add_common(figures, fig_opts);

  std::string synth_dir;
  int synth_songs = 1;
  SyntheticSongSpec synth_spec;
  auto* synth = app.add_subcommand("synth", "write a synthetic two-texture corpus");
  synth->add_option("dir", synth_dir, "output corpus directory")->required();
  synth->add_option("--songs", synth_songs, "number of copies")->capture_default_str();
  synth->add_option("--bars", synth_spec.num_bars, "bars per song")->capture_default_str();
  synth->add_option("--section", synth_spec.bars_per_section, "bars per section")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) {
      const PipelineConfig config = make_config(analyze_opts);
      std::vector<fs::path> ref_paths(refs.begin(), refs.end());
      const SongAnalysis result =
          analyze_song(audio, bars, ref_paths, config, resolve_threads(analyze_opts.jobs));
      emit(song_analysis_json(result, config), out);
      if (!seg_out.empty()) write_text(seg_out, segments_tsv(result.segmentation));
    } else if (corpus->parsed()) {
      const PipelineConfig config = make_config(corpus_opts);
      const CorpusReport report = run_corpus(corpus_dir, config, corpus_opts.jobs);
      emit(corpus_report_json(report, timings), corpus_out);
      for (const auto& s : report.songs) {
        if (!s.ok) std::cerr << "failed: " << s.stem << ": " << s.error << '\n';
      }
    } else if (sweep->parsed()) {
      PipelineConfig config = make_config(sweep_opts);
      std::vector<FeatureKind> kinds;
      for (const auto& f : sweep_features) kinds.push_back(parse_feature(f));
      const auto rows = sweep_latent(sweep_dir, config, kinds, sweep_dls, sweep_opts.jobs);
      emit(sweep_csv(rows, config.windows), sweep_out);
    } else if (synth->parsed()) {
      const SyntheticSong song = make_synthetic_song(synth_spec);
      for (int i = 0; i < synth_songs; ++i) {
        write_synthetic_song(synth_dir, "synth" + std::to_string(i), song);
      }
    } else if (figures->parsed()) {
      const PipelineConfig config = make_config(fig_opts);
      SongArtifacts artifacts;
      const SongAnalysis result =
          analyze_song(fig_audio, fig_bars, {}, config, resolve_threads(fig_opts.jobs), &artifacts);
      for (const auto& p : export_figures(artifacts, fig_dir, result.song)) {
        std::cout << p.string() << '\n';
      }
    }
  } catch (const Error& e) {
    const std::string msg = e.stage().empty() ? "[cli] " + std::string(e.what()) : e.what();
    std::cerr << "error: " << msg << " (" << errc_name(e.code()) << ")\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: [cli] " << e.what() << '\n';
    return 1;
  }
  return 0;
}
