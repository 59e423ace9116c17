#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "barseg/segmentation.h"
#include "barseg/spectral.h"
#include "barseg/trainer.h"

namespace barseg {

/// Min-max scales a matrix to 8-bit gray levels (row-major). A constant
/// matrix maps to all zeros.
std::vector<std::uint8_t> heatmap_pixels(const Eigen::MatrixXd& m);

/// Binary 8-bit PGM (P5), one pixel per matrix cell, min-max scaled.
void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& m);

/// SVG heat map with one gray square per cell, min-max scaled.
void write_svg_heatmap(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                       const std::string& title = {});

/// Comma-separated rows, full round-trip precision.
void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m);
void write_spectrogram_csv(const std::filesystem::path& path, const Spectrogram& spec);

/// epoch,loss,lr rows, one per trained epoch.
void write_loss_curve_csv(const std::filesystem::path& path, const TrainReport& report);

/// {"loss": [...], "lr": [...], "stop_reason": ..., "best_epoch": ..., "best_loss": ...}
std::string train_report_json(const TrainReport& report);

/// {"boundaries_sec": [...], "boundaries_bars": [...], "score": s}
std::string segmentation_json(const SegmentationResult& result);

/// Adjacent segment intervals as "start<TAB>end" lines.
std::string segments_tsv(const SegmentationResult& result);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace barseg
