#include "afford3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace afford3d::metrics {

namespace {

void check(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("metrics: prediction/target length mismatch");
  if (pred.empty()) throw std::invalid_argument("metrics: empty heatmap");
}

}  // namespace

std::array<double, 19> aiou_thresholds() {
  std::array<double, 19> t{};
  for (int i = 0; i < 19; ++i) t[static_cast<std::size_t>(i)] = (i + 1) / 20.0;
  return t;
}

std::optional<double> auc(std::span<const double> pred, std::span<const double> gt) {
  check(pred, gt);
  const std::size_t n = pred.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pred[order[j + 1]] == pred[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt[i] > 0.0) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double aiou(std::span<const double> pred, std::span<const double> gt) {
  check(pred, gt);
  double total = 0.0;
  for (double tau : aiou_thresholds()) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] >= tau;
      const bool g = gt[i] > 0.0;
      inter += static_cast<std::size_t>(p && g);
      uni += static_cast<std::size_t>(p || g);
    }
    total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / 19.0;
}

std::optional<double> sim(std::span<const double> pred, std::span<const double> gt) {
  check(pred, gt);
  const double gt_sum = std::accumulate(gt.begin(), gt.end(), 0.0);
  if (!(gt_sum > 0.0)) return std::nullopt;
  const double pred_sum = std::accumulate(pred.begin(), pred.end(), 0.0);
  if (!(pred_sum > 0.0)) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::min(pred[i] / pred_sum, gt[i] / gt_sum);
  return s;
}

double mae(std::span<const double> pred, std::span<const double> gt) {
  check(pred, gt);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - gt[i]);
  return s / static_cast<double>(pred.size());
}

SampleMetrics score_sample(std::span<const double> pred, std::span<const double> gt) {
  return SampleMetrics{auc(pred, gt), aiou(pred, gt), sim(pred, gt), mae(pred, gt)};
}

MetricSummary summarize(std::span<const SampleMetrics> samples) {
  MetricSummary s;
  int auc_n = 0, sim_n = 0;
  for (const SampleMetrics& m : samples) {
    if (m.auc) {
      s.auc += *m.auc;
      ++auc_n;
    } else {
      ++s.auc_skipped;
    }
    if (m.sim) {
      s.sim += *m.sim;
      ++sim_n;
    } else {
      ++s.sim_skipped;
    }
    s.aiou += m.aiou;
    s.mae += m.mae;
  }
  s.samples = static_cast<int>(samples.size());
  if (auc_n > 0) s.auc /= auc_n;
  if (sim_n > 0) s.sim /= sim_n;
  if (s.samples > 0) {
    s.aiou /= s.samples;
    s.mae /= s.samples;
  }
  return s;
}

MetricReport build_report(std::span<const SampleMetrics> samples, std::span<const std::string> affordance_of) {
  if (samples.size() != affordance_of.size()) throw std::invalid_argument("build_report: label count mismatch");
  MetricReport r;
  r.overall = summarize(samples);
  std::map<std::string, std::vector<SampleMetrics>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[affordance_of[i]].push_back(samples[i]);
  for (const auto& [name, group] : groups) r.per_affordance[name] = summarize(group);
  return r;
}

}  // namespace afford3d::metrics
