#include "afford3d/evaluate.hpp"

#include <cstdio>

#include "json.hpp"

namespace afford3d::eval {

using nlohmann::json;

std::vector<Mat> predict(net::Model& model, std::span<const train::LoadedSample> samples, bool image_on,
                         int batch_size) {
  std::vector<Mat> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<net::PairInput> batch;
    for (std::size_t i = start; i < end; ++i)
      batch.push_back({&samples[i].sample.image, samples[i].tokens, {&samples[i].geometry}});
    ad::Tape tape(false);
    net::ForwardOptions opt;
    opt.image_on = image_on;
    const net::ForwardResult r = model.forward(tape, batch, opt);
    for (const ad::Var& h : r.heatmaps) out.push_back(h.value());
  }
  return out;
}

std::vector<Mat> oracle_predictions(std::span<const train::LoadedSample> samples) {
  std::vector<Mat> out;
  for (const auto& s : samples) out.push_back(s.target);
  return out;
}

std::vector<Mat> constant_predictions(std::span<const train::LoadedSample> samples, double value) {
  std::vector<Mat> out;
  for (const auto& s : samples) out.push_back(Mat::Constant(1, s.target.cols(), value));
  return out;
}

metrics::MetricReport score(std::span<const train::LoadedSample> samples, std::span<const Mat> predictions,
                            std::span<const std::string> affordances) {
  if (samples.size() != predictions.size()) throw std::invalid_argument("score: one prediction per sample");
  std::vector<metrics::SampleMetrics> per;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Mat& p = predictions[i];
    const Mat& y = samples[i].target;
    per.push_back(metrics::score_sample(std::span(p.data(), static_cast<std::size_t>(p.size())),
                                        std::span(y.data(), static_cast<std::size_t>(y.size()))));
    names.push_back(affordances[static_cast<std::size_t>(samples[i].sample.affordance_index)]);
  }
  return metrics::build_report(per, names);
}

namespace {

std::string cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string format_grid(const metrics::MetricSummary& s, io::SplitMode split, io::View view) {
  const char* views[] = {"Full-view", "Partial-view", "Rotation-view"};
  const io::View order[] = {io::View::kFull, io::View::kPartial, io::View::kRotation};
  const std::pair<const char*, double> rows[] = {{"AUC", s.auc}, {"aIoU", s.aiou}, {"SIM", s.sim}, {"MAE", s.mae}};
  char line[160];
  std::string out;
  std::snprintf(line, sizeof line, "%-8s %-6s %14s %14s %14s\n", "Setting", "Metric", views[0], views[1], views[2]);
  out += line;
  const std::string setting = split == io::SplitMode::kSeen ? "Seen" : "Unseen";
  for (const auto& [name, value] : rows) {
    std::string cells[3];
    for (int c = 0; c < 3; ++c) cells[c] = order[c] == view ? cell(value) : "-";
    std::snprintf(line, sizeof line, "%-8s %-6s %14s %14s %14s\n", setting.c_str(), name, cells[0].c_str(),
                  cells[1].c_str(), cells[2].c_str());
    out += line;
  }
  return out;
}

std::string format_per_affordance(const metrics::MetricReport& r) {
  char line[160];
  std::string out;
  std::snprintf(line, sizeof line, "%-12s %7s %7s %7s %7s %7s\n", "affordance", "n", "AUC", "aIoU", "SIM", "MAE");
  out += line;
  for (const auto& [name, s] : r.per_affordance) {
    std::snprintf(line, sizeof line, "%-12s %7d %7.4f %7.4f %7.4f %7.4f\n", name.c_str(), s.samples, s.auc, s.aiou,
                  s.sim, s.mae);
    out += line;
  }
  return out;
}

std::string format_summary_line(const metrics::MetricSummary& s) {
  char line[200];
  std::snprintf(line, sizeof line, "auc = %.4f  aiou = %.4f  sim = %.4f  mae = %.4f  (samples = %d, auc skipped = %d)",
                s.auc, s.aiou, s.sim, s.mae, s.samples, s.auc_skipped);
  return line;
}

namespace {

json summary_json(const metrics::MetricSummary& s) {
  return {{"auc", s.auc},         {"aiou", s.aiou},
          {"sim", s.sim},         {"mae", s.mae},
          {"samples", s.samples}, {"auc_skipped", s.auc_skipped},
          {"sim_skipped", s.sim_skipped}};
}

}  // namespace

std::string report_json(const metrics::MetricReport& r, io::SplitMode split, io::View view,
                        const std::string& predictor) {
  json j;
  j["split"] = io::to_string(split);
  j["view"] = io::to_string(view);
  j["predictor"] = predictor;
  j["overall"] = summary_json(r.overall);
  json per = json::object();
  for (const auto& [name, s] : r.per_affordance) per[name] = summary_json(s);
  j["per_affordance"] = per;
  return j.dump(2) + "\n";
}

}  // namespace afford3d::eval
