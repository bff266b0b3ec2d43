#pragma once

// Batched inference and benchmark reporting.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "afford3d/config.hpp"
#include "afford3d/metrics.hpp"
#include "afford3d/trainer.hpp"

namespace afford3d::eval {

using ad::Mat;

// (1, N) heatmap per sample; eval-mode batch norm, one cloud per image.
std::vector<Mat> predict(net::Model& model, std::span<const train::LoadedSample> samples, bool image_on,
                         int batch_size);

std::vector<Mat> oracle_predictions(std::span<const train::LoadedSample> samples);
std::vector<Mat> constant_predictions(std::span<const train::LoadedSample> samples, double value);

metrics::MetricReport score(std::span<const train::LoadedSample> samples, std::span<const Mat> predictions,
                            std::span<const std::string> affordances);

// Setting x metric rows, one column per view; only the evaluated cell is
// filled.
std::string format_grid(const metrics::MetricSummary& s, io::SplitMode split, io::View view);
std::string format_per_affordance(const metrics::MetricReport& r);
std::string format_summary_line(const metrics::MetricSummary& s);
std::string report_json(const metrics::MetricReport& r, io::SplitMode split, io::View view, const std::string& predictor);

}  // namespace afford3d::eval
