#pragma once

// Heatmap metrics: AUC, aIoU, SIM and MAE over a single (N, 1) prediction,
// plus aggregation into a report. Ground truth is binarized at > 0 wherever
// a binary label is required.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace afford3d::metrics {

// Thresholds 0.05, 0.10, ..., 0.95; a point is predicted positive when
// pred >= threshold.
std::array<double, 19> aiou_thresholds();

// Mann-Whitney AUC with midranks; nullopt when gt has no positives or no
// negatives.
std::optional<double> auc(std::span<const double> pred, std::span<const double> gt);
// IoU averaged over the 19 thresholds; an empty union counts as IoU 1.
double aiou(std::span<const double> pred, std::span<const double> gt);
// Histogram intersection of sum-normalized maps; nullopt when sum(gt) <= 0,
// 0 when sum(pred) <= 0.
std::optional<double> sim(std::span<const double> pred, std::span<const double> gt);
double mae(std::span<const double> pred, std::span<const double> gt);

struct SampleMetrics {
  std::optional<double> auc;
  double aiou = 0.0;
  std::optional<double> sim;
  double mae = 0.0;
};

SampleMetrics score_sample(std::span<const double> pred, std::span<const double> gt);

struct MetricSummary {
  double auc = 0.0;
  double aiou = 0.0;
  double sim = 0.0;
  double mae = 0.0;
  int samples = 0;
  int auc_skipped = 0;
  int sim_skipped = 0;
};

struct MetricReport {
  MetricSummary overall;
  std::map<std::string, MetricSummary> per_affordance;
};

// Means over samples; skipped samples are excluded from the affected metric
// and counted.
MetricSummary summarize(std::span<const SampleMetrics> samples);
MetricReport build_report(std::span<const SampleMetrics> samples, std::span<const std::string> affordance_of);

}  // namespace afford3d::metrics
