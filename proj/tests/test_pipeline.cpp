#include <gtest/gtest.h>

#include "json.hpp"

#include "barseg/export.h"
#include "barseg/pipeline.h"
#include "barseg/synthetic.h"
#include "test_support.h"

using namespace barseg;
using barseg::testing::TempDir;
using barseg::testing::read_file;
using barseg::testing::throws_errc;
using barseg::testing::write_file;

namespace {

SyntheticSong short_song() {
  SyntheticSongSpec spec;
  spec.num_bars = 24;
  spec.bars_per_section = 8;
  return make_synthetic_song(spec);
}

PipelineConfig raw_config() {
  PipelineConfig c;
  c.mode = PipelineMode::raw_feature;
  return c;
}

PipelineConfig quick_latent_config() {
  PipelineConfig c;
  c.d_ls = 4;
  c.train.max_epochs = 5;
  return c;
}

}  // namespace

TEST(Heatmap, Scaling) {
  Eigen::MatrixXd m(2, 2);
  m << -1.0, 0.0, 0.0, 1.0;
  EXPECT_EQ(heatmap_pixels(m), (std::vector<std::uint8_t>{0, 128, 128, 255}));
  EXPECT_EQ(heatmap_pixels(Eigen::MatrixXd::Constant(3, 3, 0.7)), std::vector<std::uint8_t>(9, 0));
}

TEST(Heatmap, IdentityPgm) {
  TempDir dir;
  write_pgm(dir / "i.pgm", Eigen::MatrixXd::Identity(4, 4));
  const std::string header = "P5\n4 4\n255\n";
  const auto bytes = read_file(dir / "i.pgm");
  ASSERT_EQ(bytes.size(), header.size() + 16);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  for (int i = 0; i < 16; ++i) {
    EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + i]), i % 5 == 0 ? 255 : 0);
  }
}

TEST(Export, LossCurveRows) {
  TrainReport r;
  r.loss_history = {0.5, 0.25, 0.125};
  r.lr_history = {1e-3, 1e-3, 1e-4};
  TempDir dir;
  write_loss_curve_csv(dir / "loss.csv", r);
  std::istringstream in(read_file(dir / "loss.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 4);  // header plus one row per epoch
}

TEST(Seeds, StemHash) {
  // FNV-1a test vectors.
  EXPECT_EQ(stem_hash(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(stem_hash("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(song_seed(5, "a"), 0xaf63dc4c8601ec8cull + 5);
  EXPECT_NE(song_seed(0, "song1"), song_seed(0, "song2"));
}

TEST(AnalyzeSong, RawModeFindsSections) {
  TempDir dir;
  const auto song = short_song();
  write_synthetic_song(dir.path(), "s", song);
  const auto r = analyze_song(dir / "audio/s.wav", dir / "bars/s.txt", {dir / "refs/s.lab"}, raw_config());
  EXPECT_EQ(r.song, "s");
  EXPECT_EQ(r.num_bars, 24u);
  EXPECT_EQ(r.segmentation.boundaries_bars, (std::vector<std::size_t>{0, 8, 16, 24}));
  ASSERT_EQ(r.scores.size(), 2u);
  EXPECT_EQ(r.scores[0].f_measure, 1.0);
  EXPECT_EQ(r.scores[1].f_measure, 1.0);
  EXPECT_FALSE(r.train_report.has_value());
}

TEST(AnalyzeSong, LatentModeTrainsAndIsReproducible) {
  TempDir dir;
  write_synthetic_song(dir.path(), "s", short_song());
  const auto cfg = quick_latent_config();
  SongArtifacts art;
  const auto a = analyze_song(dir / "audio/s.wav", dir / "bars/s.txt", {}, cfg, 1, &art);
  const auto b = analyze_song(dir / "audio/s.wav", dir / "bars/s.txt", {}, cfg);
  ASSERT_TRUE(a.train_report.has_value());
  EXPECT_EQ(a.train_report->loss_history.size(), 5u);
  EXPECT_EQ(a.seed, song_seed(0, "s"));
  EXPECT_EQ(a.segmentation.boundaries_bars, b.segmentation.boundaries_bars);
  EXPECT_EQ(a.segmentation.score, b.segmentation.score);
  EXPECT_TRUE(a.scores.empty());
  ASSERT_TRUE(art.latent.has_value());
  EXPECT_EQ(art.latent->size(), 24);
  EXPECT_EQ(art.raw.size(), 24);

  const auto paths = export_figures(art, dir / "fig", "s");
  EXPECT_FALSE(paths.empty());
  for (const auto& p : paths) EXPECT_TRUE(std::filesystem::exists(p)) << p;
}

TEST(AnalyzeSong, ErrorsCarryStage) {
  TempDir dir;
  write_synthetic_song(dir.path(), "s", short_song());
  auto expect_stage = [](auto&& fn, const std::string& stage) {
    try {
      fn();
      ADD_FAILURE() << "no error for stage " << stage;
    } catch (const Error& e) {
      EXPECT_EQ(e.stage(), stage) << e.what();
      EXPECT_EQ(std::string(e.what()).rfind("[" + stage + "]", 0), 0u) << e.what();
    }
  };
  expect_stage([&] { analyze_song(dir / "missing.wav", dir / "bars/s.txt", {}, raw_config()); }, "load_audio");
  write_file(dir / "bad.txt", "0.0\n5.0\n3.0\n");
  expect_stage([&] { analyze_song(dir / "audio/s.wav", dir / "bad.txt", {}, raw_config()); }, "bar_grid");
  write_file(dir / "bad.lab", "0.0\t1.0\tA\n2.0\t3.0\tB\n");
  expect_stage([&] { analyze_song(dir / "audio/s.wav", dir / "bars/s.txt", {dir / "bad.lab"}, raw_config()); },
               "evaluate");
  auto cfg = raw_config();
  cfg.d_ls = 0;
  expect_stage([&] { analyze_song(dir / "audio/s.wav", dir / "bars/s.txt", {}, cfg); }, "config");
}

TEST(Corpus, MeansFailuresAndDeterminism) {
  TempDir dir;
  const auto song = short_song();
  for (const char* stem : {"a", "b", "c"}) write_synthetic_song(dir.path(), stem, song);
  write_file(dir / "audio/zz.wav", "RIFF????WAVEjunk");

  const auto report = run_corpus(dir.path(), raw_config(), 2);
  ASSERT_EQ(report.songs.size(), 4u);
  EXPECT_EQ(report.songs[0].stem, "a");
  EXPECT_EQ(report.songs[3].stem, "zz");
  EXPECT_FALSE(report.songs[3].ok);
  EXPECT_NE(report.songs[3].error.find("[load_audio]"), std::string::npos);
  EXPECT_EQ(report.failures, 1u);
  ASSERT_EQ(report.means.size(), 2u);
  for (const auto& m : report.means) {
    EXPECT_EQ(m.songs, 3u);
    EXPECT_EQ(m.f_measure, 1.0);
  }

  const auto json = corpus_report_json(report);
  const auto again = corpus_report_json(run_corpus(dir.path(), raw_config(), 1));
  EXPECT_EQ(json, again);
  const auto parsed = nlohmann::json::parse(json);
  EXPECT_TRUE(parsed.is_object());
  EXPECT_EQ(json.find("runtime"), std::string::npos);
}

TEST(Corpus, MeansAreUnweighted) {
  std::vector<SongRecord> songs(3);
  songs[0].ok = songs[1].ok = true;
  songs[0].analysis.scores = {{1.0, 1.0, 1.0, 0.5, 4}};
  songs[1].analysis.scores = {{0.5, 0.25, 1.0 / 3.0, 0.5, 1}};
  const auto means = corpus_means(songs, {0.5});
  ASSERT_EQ(means.size(), 1u);
  EXPECT_EQ(means[0].songs, 2u);
  EXPECT_DOUBLE_EQ(means[0].precision, 0.75);
  EXPECT_DOUBLE_EQ(means[0].recall, 0.625);
  EXPECT_DOUBLE_EQ(means[0].f_measure, (1.0 + 1.0 / 3.0) / 2.0);
}

TEST(Corpus, EmptyDirectory) {
  TempDir dir;
  EXPECT_TRUE(throws_errc([&] { run_corpus(dir.path(), raw_config()); }, Errc::empty_corpus));
  std::filesystem::create_directories(dir / "audio");
  EXPECT_TRUE(throws_errc([&] { run_corpus(dir.path(), raw_config()); }, Errc::empty_corpus));
}

TEST(Sweep, RowsMatchCorpusRuns) {
  TempDir dir;
  write_synthetic_song(dir.path(), "a", short_song());
  auto cfg = quick_latent_config();
  const auto rows = sweep_latent(dir.path(), cfg, {FeatureKind::log_mel, FeatureKind::chroma}, {2}, 1);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& row : rows) {
    ASSERT_EQ(row.means.size(), 2u);
    for (const auto& m : row.means) {
      EXPECT_GE(m.f_measure, 0.0);
      EXPECT_LE(m.f_measure, 1.0);
    }
  }
  cfg.d_ls = 2;
  cfg.feature = FeatureKind::chroma;
  const auto direct = run_corpus(dir.path(), cfg, 1);
  EXPECT_EQ(rows[1].means[1].f_measure, direct.means[1].f_measure);

  const auto csv = sweep_csv(rows, cfg.windows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
