#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "barseg/audio_io.h"
#include "barseg/evalmetrics.h"
#include "barseg/parallel.h"
#include "barseg/pipeline.h"
#include "barseg/segmentation.h"
#include "barseg/similarity.h"
#include "barseg/spectral.h"
#include "barseg/synthetic.h"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace barseg;

namespace {

PipelineConfig make_config(const std::string& feature, int d_ls, const std::string& mode, double lambda,
                           int max_seg, std::uint64_t seed, int epochs, const std::vector<double>& windows,
                           bool trim, bool best_of_refs) {
  PipelineConfig c;
  c.feature = parse_feature(feature);
  c.d_ls = d_ls;
  c.mode = parse_mode(mode);
  c.segmentation.lambda = lambda;
  c.segmentation.max_segment_bars = max_seg;
  c.seed = seed;
  c.train.max_epochs = epochs;
  c.windows = windows;
  c.trim = trim;
  c.best_of_refs = best_of_refs;
  return c;
}

py::dict score_dict(const HitRateScore& s) {
  py::dict d;
  d["window"] = s.window;
  d["precision"] = s.precision;
  d["recall"] = s.recall;
  d["f_measure"] = s.f_measure;
  d["matched"] = s.matched;
  return d;
}

}  // namespace

PYBIND11_MODULE(_barseg, m) {
  m.doc() = "Bar-level music structure analysis with single-song autoencoders";

  static py::exception<Error> error_type(m, "BarsegError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(std::string(e.what()) + " (" + std::string(errc_name(e.code())) + ")");
      exc.attr("code") = std::string(errc_name(e.code()));
      exc.attr("stage") = e.stage();
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def(
      "load_wav",
      [](const fs::path& path) {
        AudioBuffer a = load_wav(path);
        return py::make_tuple(py::array_t<float>(a.samples.size(), a.samples.data()), a.sample_rate);
      },
      py::arg("path"), "Mono float samples and the sample rate of a WAV file.");

  m.def(
      "feature",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> samples, int sample_rate,
         const std::string& kind) {
        AudioBuffer a;
        a.samples.assign(samples.data(), samples.data() + samples.size());
        a.sample_rate = sample_rate;
        py::gil_scoped_release release;
        return Eigen::MatrixXf(compute_feature(a, parse_feature(kind)).values);
      },
      py::arg("samples"), py::arg("sample_rate"), py::arg("kind") = "log_mel",
      "Feature matrix (bins x frames) of mono audio.");

  m.def(
      "autosimilarity", [](const Eigen::MatrixXd& Z, bool normalize) { return autosimilarity(Z, normalize).values; },
      py::arg("Z"), py::arg("normalize") = true, "Cosine autosimilarity of the columns of Z.");

  m.def(
      "kernel",
      [](int n) {
        const Kernel k = build_kernel(n);
        Eigen::MatrixXi out(n, n);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) out(i, j) = k(i, j);
        }
        return out;
      },
      py::arg("n"));

  m.def(
      "dp_segment",
      [](const Eigen::MatrixXd& A, double lambda, int max_seg, int min_seg) {
        Autosimilarity a;
        a.values = A;
        SegmentationConfig c;
        c.lambda = lambda;
        c.max_segment_bars = max_seg;
        c.min_segment_bars = min_seg;
        const auto r = dp_segment(a, c);
        return py::make_tuple(r.boundaries_bars, r.score);
      },
      py::arg("A"), py::arg("lambda_") = 0.5, py::arg("max_seg") = 36, py::arg("min_seg") = 1,
      "Optimal bar boundaries (including 0 and B) and their total score.");

  m.def(
      "hit_rate",
      [](const std::vector<double>& est, const std::vector<double>& ref, double window, bool trim) {
        return score_dict(hit_rate(est, ref, window, trim));
      },
      py::arg("est"), py::arg("ref"), py::arg("window"), py::arg("trim") = false);

  m.def(
      "analyze",
      [](const fs::path& audio, const fs::path& bars, const std::vector<fs::path>& refs, const std::string& feature,
         int d_ls, const std::string& mode, double lambda, int max_seg, std::uint64_t seed, int epochs,
         const std::vector<double>& windows, bool trim, bool best_of_refs, int jobs) {
        const auto c = make_config(feature, d_ls, mode, lambda, max_seg, seed, epochs, windows, trim, best_of_refs);
        std::string json;
        {
          py::gil_scoped_release release;
          json = song_analysis_json(analyze_song(audio, bars, refs, c, resolve_threads(jobs)), c);
        }
        return py::module_::import("json").attr("loads")(json);
      },
      py::arg("audio"), py::arg("bars"), py::arg("refs") = std::vector<fs::path>{}, py::arg("feature") = "log_mel",
      py::arg("d_ls") = 32, py::arg("mode") = "latent", py::arg("lambda_") = 0.5, py::arg("max_seg") = 36,
      py::arg("seed") = 0, py::arg("epochs") = 1000, py::arg("windows") = std::vector<double>{0.5, 3.0},
      py::arg("trim") = false, py::arg("best_of_refs") = false, py::arg("jobs") = 1,
      "Segment one song; returns the JSON report as a dict.");

  m.def(
      "corpus",
      [](const fs::path& dir, const std::string& feature, int d_ls, const std::string& mode, double lambda,
         int max_seg, std::uint64_t seed, int epochs, const std::vector<double>& windows, bool trim,
         bool best_of_refs, int jobs) {
        const auto c = make_config(feature, d_ls, mode, lambda, max_seg, seed, epochs, windows, trim, best_of_refs);
        std::string json;
        {
          py::gil_scoped_release release;
          json = corpus_report_json(run_corpus(dir, c, jobs));
        }
        return json;
      },
      py::arg("dir"), py::arg("feature") = "log_mel", py::arg("d_ls") = 32, py::arg("mode") = "latent",
      py::arg("lambda_") = 0.5, py::arg("max_seg") = 36, py::arg("seed") = 0, py::arg("epochs") = 1000,
      py::arg("windows") = std::vector<double>{0.5, 3.0}, py::arg("trim") = false, py::arg("best_of_refs") = false,
      py::arg("jobs") = 0, "Corpus report as a JSON string (byte-identical across identical runs).");

  m.def(
      "write_synthetic_corpus",
      [](const fs::path& dir, int songs, int bars, int bars_per_section) {
        SyntheticSongSpec spec;
        spec.num_bars = bars;
        spec.bars_per_section = bars_per_section;
        const SyntheticSong song = make_synthetic_song(spec);
        for (int i = 0; i < songs; ++i) write_synthetic_song(dir, "synth" + std::to_string(i), song);
      },
      py::arg("dir"), py::arg("songs") = 1, py::arg("bars") = 64, py::arg("bars_per_section") = 8,
      "Two-texture songs with bar grids and reference segments in the corpus layout.");
}
