#include "afford3d/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "afford3d/config.hpp"
#include "afford3d/evaluate.hpp"
#include "afford3d/generate.hpp"
#include "afford3d/selftest.hpp"
#include "afford3d/trainer.hpp"

namespace afford3d::cli {

namespace fs = std::filesystem;
using ad::Mat;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config, "Config file of key = value lines");
  cmd->add_option("--set", c.sets, "Override key=value (repeatable)")->take_all();
  cmd->add_option("--out", c.out, out_help);
  c.seed_opt = cmd->add_option("--seed", c.seed, "Master seed");
}

RunConfig resolve(const Common& c, bool validate = true) {
  RunConfig cfg = load_config(c.config, c.sets);
  if (c.seed_opt->count() > 0) cfg.seed = c.seed;
  if (validate) cfg.validate();
  return cfg;
}

void write_snapshot(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  io::write_text(dir / "config.resolved", cfg.snapshot());
}

fs::path out_or(const Common& c, const fs::path& fallback) { return c.out.empty() ? fallback : fs::path(c.out); }

// Adopts the dimensions, view and split recorded in the dataset manifest.
void adopt_manifest(RunConfig& cfg) {
  const io::Manifest m = io::read_manifest(cfg.data_root);
  cfg.data.n_points = m.n_points;
  cfg.data.image_size = m.image_size;
  cfg.data.view = m.view;
  cfg.data.split = m.split;
  cfg.data.affordances = m.affordances;
  cfg.data.objects = m.objects;
}

fs::path checkpoint_dir(const RunConfig& cfg, const fs::path& out) {
  return cfg.eval.checkpoint.empty() ? out / "best" : fs::path(cfg.eval.checkpoint);
}

struct LoadedModel {
  net::Tokenizer tokenizer;
  std::unique_ptr<net::Model> model;
};

// Model and ablation settings come from the checkpoint's own snapshot.
LoadedModel load_model(RunConfig& cfg, const fs::path& dir) {
  const train::CheckpointInfo info = train::read_checkpoint_info(dir);
  const RunConfig trained = config_from_assignments(parse_assignments(info.config_snapshot));
  cfg.preset = trained.preset;
  cfg.model = trained.model;
  cfg.train.image_on = trained.train.image_on;
  cfg.train.granularity = trained.train.granularity;
  cfg.validate();
  LoadedModel lm;
  lm.tokenizer = net::Tokenizer(info.vocabulary);
  lm.model = std::make_unique<net::Model>(cfg.model, lm.tokenizer.vocab_size(), cfg.seed);
  train::load_checkpoint(dir, *lm.model);
  return lm;
}

const std::vector<train::LoadedSample>& pick_subset(const train::Dataset& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "test") return d.test;
  throw ConfigError("eval.subset must be train, val or test (got '" + name + "')");
}

const io::SampleRecord& find_record(const io::Manifest& m, const std::string& id) {
  for (const io::SampleRecord& r : m.samples)
    if (r.sample_id == id) return r;
  throw io::ValidationError("no sample '" + id + "' in the dataset");
}

// ---- commands ----

int cmd_gen_data(const Common& c) {
  RunConfig cfg = resolve(c);
  if (!c.out.empty()) cfg.data_root = c.out;
  const fs::path root = cfg.data_root;
  const io::Manifest m = synth::generate_dataset(cfg.data, cfg.seed, root);
  write_snapshot(root, cfg);
  std::printf("wrote %d train and %d test samples (%s view, %s split) to %s\n", m.count("train"), m.count("test"),
              io::to_string(m.view).c_str(), io::to_string(m.split).c_str(), root.string().c_str());
  return kOk;
}

int cmd_train(const Common& c) {
  RunConfig cfg = resolve(c);
  const fs::path out = out_or(c, "run");
  write_snapshot(out, cfg);
  auto data = std::make_shared<const train::Dataset>(train::load_dataset(cfg.data_root, cfg));
  train::Trainer trainer(cfg, data);
  std::printf("%zu train / %zu val samples, %d steps (%d per epoch)\n", data->train.size(), data->val.size(),
              trainer.total_steps(), trainer.steps_per_epoch());
  const int spe = trainer.steps_per_epoch();
  const train::FitResult res = trainer.fit(out, [&](const train::StepRecord& r) {
    if ((r.step + 1) % spe == 0 || r.step + 1 == trainer.total_steps())
      std::printf("epoch %d step %d loss %.6f lr %.3e\n", r.epoch, r.step + 1, r.loss, r.lr);
    std::fflush(stdout);
  });
  std::printf("best validation aiou %.4f at step %d\n", res.best_val_aiou, trainer.state().best_step);
  std::printf("frozen parameters %s\n", res.frozen_hash_start == res.frozen_hash_end ? "unchanged" : "CHANGED");
  return kOk;
}

int cmd_eval(const Common& c) {
  RunConfig cfg = resolve(c, false);
  const fs::path out = out_or(c, "run");
  adopt_manifest(cfg);
  cfg.validate();

  std::vector<Mat> preds;
  std::shared_ptr<train::Dataset> data;
  if (cfg.eval.predictor == Predictor::kModel) {
    LoadedModel lm = load_model(cfg, checkpoint_dir(cfg, out));
    data = std::make_shared<train::Dataset>(train::load_dataset(cfg.data_root, cfg, &lm.tokenizer));
    preds = eval::predict(*lm.model, pick_subset(*data, cfg.eval.subset), cfg.train.image_on, cfg.eval.batch_size);
  } else {
    data = std::make_shared<train::Dataset>(train::load_dataset(cfg.data_root, cfg));
    const auto& s = pick_subset(*data, cfg.eval.subset);
    preds = cfg.eval.predictor == Predictor::kOracle ? eval::oracle_predictions(s)
                                                     : eval::constant_predictions(s, cfg.eval.constant);
  }
  const auto& samples = pick_subset(*data, cfg.eval.subset);
  if (samples.empty()) throw io::ValidationError("subset '" + cfg.eval.subset + "' is empty");
  const metrics::MetricReport rep = eval::score(samples, preds, data->manifest.affordances);
  const std::string grid = eval::format_grid(rep.overall, cfg.data.split, cfg.data.view);
  const std::string per = eval::format_per_affordance(rep);

  write_snapshot(out, cfg);
  io::write_text(out / "eval_report.json",
                 eval::report_json(rep, cfg.data.split, cfg.data.view, to_string(cfg.eval.predictor)));
  io::write_text(out / "eval_grid.txt", grid + "\n" + per);
  std::cout << grid << "\n" << per << "\n" << eval::format_summary_line(rep.overall) << "\n";
  return kOk;
}

struct PredictArgs {
  std::string sample, image, cloud, instruction, checkpoint;
};

int cmd_predict(const Common& c, const PredictArgs& a) {
  RunConfig cfg = resolve(c, false);
  if (!a.checkpoint.empty()) cfg.eval.checkpoint = a.checkpoint;
  const fs::path out = out_or(c, "run");
  const bool by_id = !a.sample.empty();
  const bool by_files = !a.image.empty() || !a.cloud.empty() || !a.instruction.empty();
  if (by_id == by_files) throw UsageError("predict needs either --sample or all of --image, --cloud, --instruction");
  if (by_files && (a.image.empty() || a.cloud.empty() || a.instruction.empty()))
    throw UsageError("--image, --cloud and --instruction must be given together");

  if (by_id) adopt_manifest(cfg);
  LoadedModel lm = load_model(cfg, checkpoint_dir(cfg, out));

  train::LoadedSample ls;
  if (by_id) {
    const io::Manifest m = io::read_manifest(cfg.data_root);
    ls = train::prepare_sample(io::read_sample(cfg.data_root, find_record(m, a.sample), m), lm.tokenizer, cfg);
  } else {
    const io::Array img = io::read_array(a.image);
    if (img.shape.size() != 3 || img.shape[0] != 3 || img.shape[1] != img.shape[2])
      throw io::ValidationError(a.image + ": expected a (3, S, S) image array");
    const Mat cloud = io::to_mat(io::read_array(a.cloud));
    if (cloud.cols() != 3) throw io::ValidationError(a.cloud + ": expected an (N, 3) point array");
    ls.sample.image.size = static_cast<int>(img.shape[1]);
    ls.sample.image.pixels.resize(3, static_cast<Eigen::Index>(img.shape[1] * img.shape[2]));
    std::copy(img.data.begin(), img.data.end(), ls.sample.image.pixels.data());
    ls.sample.cloud.xyz = cloud;
    ls.geometry = net::build_point_geometry(ls.sample.cloud, cfg.model);
    ls.tokens = lm.tokenizer.encode(a.instruction, cfg.model.n_l);
    ls.target = Mat::Zero(1, cloud.rows());
  }
  const std::vector<Mat> pred = eval::predict(*lm.model, std::span(&ls, 1), cfg.train.image_on, 1);
  write_snapshot(out, cfg);
  const fs::path file = out / "heatmap.bin";
  io::write_array(file, io::to_array(pred[0].transpose(), io::DType::kF32));
  std::printf("wrote %s (%ld points, mean %.4f, max %.4f)\n", file.string().c_str(), static_cast<long>(pred[0].cols()),
              pred[0].mean(), pred[0].maxCoeff());
  return kOk;
}

struct RenderArgs {
  std::string cloud, heatmap, sample, file = "heatmap_points.txt";
};

int cmd_render(const Common& c, const RenderArgs& a) {
  RunConfig cfg = resolve(c);
  const fs::path out = out_or(c, "run");
  if (a.heatmap.empty()) throw UsageError("render needs --heatmap");
  if (a.cloud.empty() == a.sample.empty()) throw UsageError("render needs exactly one of --cloud or --sample");

  Mat xyz;
  if (!a.sample.empty()) {
    const io::Manifest m = io::read_manifest(cfg.data_root);
    xyz = io::read_sample(cfg.data_root, find_record(m, a.sample), m).cloud.xyz;
  } else {
    xyz = io::to_mat(io::read_array(a.cloud));
  }
  Mat heat = io::to_mat(io::read_array(a.heatmap));
  if (heat.rows() == 1 && heat.cols() != 1) heat.transposeInPlace();
  if (xyz.cols() != 3 || heat.cols() != 1 || heat.rows() != xyz.rows())
    throw io::ValidationError("cloud (N, 3) and heatmap (N, 1) sizes disagree");
  if (!heat.allFinite()) throw io::ValidationError("heatmap contains non-finite values");

  std::ostringstream txt;
  char line[128];
  for (Eigen::Index i = 0; i < xyz.rows(); ++i) {
    const Rgb col = heat_color(heat(i, 0));
    std::snprintf(line, sizeof line, "%.6f %.6f %.6f %d %d %d\n", xyz(i, 0), xyz(i, 1), xyz(i, 2), col.r, col.g,
                  col.b);
    txt << line;
  }
  write_snapshot(out, cfg);
  io::write_text(out / a.file, txt.str());
  std::printf("wrote %ld points to %s\n", static_cast<long>(xyz.rows()), (out / a.file).string().c_str());
  return kOk;
}

int cmd_selftest(const Common& c, int instances, int probes) {
  RunConfig cfg = resolve(c);
  std::vector<selftest::Check> checks = selftest::metric_checks(instances, cfg.seed);
  if (probes > 0) checks.push_back(selftest::gradient_check(probes, cfg.seed + 7));
  if (!c.out.empty()) write_snapshot(c.out, cfg);
  bool ok = true;
  for (const selftest::Check& k : checks) {
    std::printf("%s  %s%s%s\n", k.pass ? "PASS" : "FAIL", k.name.c_str(), k.detail.empty() ? "" : ": ",
                k.detail.c_str());
    ok = ok && k.pass;
  }
  return ok ? kOk : kValidation;
}

}  // namespace

Rgb heat_color(double p) {
  const double q = std::isfinite(p) ? std::clamp(p, 0.0, 1.0) : 0.0;
  const int r = static_cast<int>(std::lround(255.0 * q));
  return {r, 0, 255 - r};
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Instruction-conditioned 3D affordance grounding on synthetic data", "afford3d"};
  app.require_subcommand(1);

  Common gen, tr, ev, pr, rd, st;
  add_common(app.add_subcommand("gen-data", "Generate a synthetic dataset"), gen, "Dataset root (overrides data.root)");
  add_common(app.add_subcommand("train", "Train a model"), tr, "Run directory (default: run)");
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or reference predictor");
  add_common(eval_cmd, ev, "Run directory (default: run)");
  std::string eval_ckpt;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint directory (default: <out>/best)");

  PredictArgs pa;
  CLI::App* pred_cmd = app.add_subcommand("predict", "Predict one heatmap");
  add_common(pred_cmd, pr, "Output directory (default: run)");
  pred_cmd->add_option("--sample", pa.sample, "Sample id from the dataset");
  pred_cmd->add_option("--image", pa.image, "Image array file (3, S, S)");
  pred_cmd->add_option("--cloud", pa.cloud, "Point array file (N, 3)");
  pred_cmd->add_option("--instruction", pa.instruction, "Instruction text");
  pred_cmd->add_option("--checkpoint", pa.checkpoint, "Checkpoint directory (default: <out>/best)");

  RenderArgs ra;
  CLI::App* render_cmd = app.add_subcommand("render", "Export a heatmap as colored points");
  add_common(render_cmd, rd, "Output directory (default: run)");
  render_cmd->add_option("--cloud", ra.cloud, "Point array file (N, 3)");
  render_cmd->add_option("--sample", ra.sample, "Take the cloud from a dataset sample");
  render_cmd->add_option("--heatmap", ra.heatmap, "Heatmap array file (N, 1)");
  render_cmd->add_option("--file", ra.file, "Output file name inside --out");

  int instances = 200, probes = 500;
  CLI::App* self_cmd = app.add_subcommand("selftest", "Run metric oracles and gradient checks");
  add_common(self_cmd, st, "Directory for the resolved config");
  self_cmd->add_option("--instances", instances, "Random metric instances");
  self_cmd->add_option("--probes", probes, "Gradient probes (0 skips the check)");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-data") return cmd_gen_data(gen);
    if (name == "train") return cmd_train(tr);
    if (name == "eval") {
      if (!eval_ckpt.empty()) ev.sets.push_back("eval.checkpoint=" + eval_ckpt);
      return cmd_eval(ev);
    }
    if (name == "predict") return cmd_predict(pr, pa);
    if (name == "render") return cmd_render(rd, ra);
    return cmd_selftest(st, instances, probes);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const io::FormatError& e) {
    std::cerr << "format error (" << io::errc_name(e.code()) << "): " << e.what() << "\n";
    return kValidation;
  } catch (const io::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace afford3d::cli
