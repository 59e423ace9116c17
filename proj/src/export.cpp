#include "barseg/export.h"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "barseg/error.h"
#include "json.hpp"

namespace barseg {

namespace {

std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<std::uint8_t> heatmap_pixels(const Eigen::MatrixXd& m) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(m.size()), 0);
  if (m.size() == 0) return px;
  const double lo = m.minCoeff(), hi = m.maxCoeff();
  const double range = hi - lo;
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j, ++k) {
      px[k] = range > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * (m(i, j) - lo) / range)) : 0;
    }
  }
  return px;
}

void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  const auto px = heatmap_pixels(m);
  auto out = open_out(path, true);
  out << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw Error(Errc::io_error, "short write to " + path.string());
}

void write_svg_heatmap(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                       const std::string& title) {
  const auto px = heatmap_pixels(m);
  constexpr int kCell = 4;
  auto out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << m.cols() * kCell << "\" height=\""
      << m.rows() * kCell << "\" shape-rendering=\"crispEdges\">\n";
  if (!title.empty()) out << "<title>" << title << "</title>\n";
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j, ++k) {
      const int v = px[k];
      out << "<rect x=\"" << j * kCell << "\" y=\"" << i * kCell << "\" width=\"" << kCell
          << "\" height=\"" << kCell << "\" fill=\"rgb(" << v << ',' << v << ',' << v << ")\"/>\n";
    }
  }
  out << "</svg>\n";
}

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  auto out = open_out(path);
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

void write_spectrogram_csv(const std::filesystem::path& path, const Spectrogram& spec) {
  write_matrix_csv(path, spec.values.cast<double>());
}

void write_loss_curve_csv(const std::filesystem::path& path, const TrainReport& report) {
  auto out = open_out(path);
  out << std::setprecision(17) << "epoch,loss,lr\n";
  for (std::size_t e = 0; e < report.loss_history.size(); ++e) {
    out << e + 1 << ',' << report.loss_history[e] << ',' << report.lr_history[e] << '\n';
  }
}

std::string train_report_json(const TrainReport& report) {
  nlohmann::ordered_json j;
  j["loss"] = report.loss_history;
  j["lr"] = report.lr_history;
  j["stop_reason"] = stop_reason_name(report.stop_reason);
  j["best_epoch"] = report.best_epoch;
  j["best_loss"] = report.best_loss;
  return j.dump(2) + "\n";
}

std::string segmentation_json(const SegmentationResult& result) {
  nlohmann::ordered_json j;
  j["boundaries_sec"] = result.boundaries_seconds;
  j["boundaries_bars"] = result.boundaries_bars;
  j["score"] = result.score;
  return j.dump(2) + "\n";
}

std::string segments_tsv(const SegmentationResult& result) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 1; i < result.boundaries_seconds.size(); ++i) {
    out << result.boundaries_seconds[i - 1] << '\t' << result.boundaries_seconds[i] << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path, true);
  out << text;
  if (!out) throw Error(Errc::io_error, "short write to " + path.string());
}

}  // namespace barseg
