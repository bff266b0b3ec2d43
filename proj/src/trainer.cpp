#include "afford3d/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "afford3d/evaluate.hpp"
#include "afford3d/losses.hpp"
#include "afford3d/parallel.hpp"
#include "afford3d/rng.hpp"
#include "json.hpp"

namespace afford3d::train {

using nlohmann::json;

double lr_at(int step, double base_lr, int warmup_steps, int total_steps) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / warmup_steps;
  const int span = total_steps - warmup_steps;
  if (span <= 0) return base_lr;
  const double t = std::min(step - warmup_steps, span);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t / span));
}

void adamw_step(std::span<ad::Parameter* const> params, AdamState& state, double lr, const AdamHyper& hyper) {
  for (const ad::Parameter* p : params) {
    if (!p->trainable) continue;
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols())
      throw std::invalid_argument("adamw_step: gradient shape mismatch for " + p->name);
    if (!p->grad.allFinite()) throw NonFiniteGradient("non-finite gradient in parameter '" + p->name + "'");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  for (ad::Parameter* p : params) {
    if (!p->trainable) continue;
    Mat& m = state.m[p->name];
    Mat& v = state.v[p->name];
    if (m.size() == 0) {
      m = Mat::Zero(p->value.rows(), p->value.cols());
      v = Mat::Zero(p->value.rows(), p->value.cols());
    }
    p->value *= 1.0 - lr * hyper.weight_decay;
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * p->grad;
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * p->grad.cwiseAbs2();
    p->value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + hyper.eps);
  }
}

// ---------------------------------------------------------------------------
// data

std::string instruction_text(const io::Sample& s, synth::Granularity g) {
  return synth::with_granularity(s.instruction, g).text;
}

net::Tokenizer build_tokenizer(std::span<const io::Sample> train) {
  std::vector<std::string> texts;
  for (const io::Sample& s : train) {
    texts.push_back(s.instruction.text);
    texts.push_back(s.instruction.verb);
    texts.push_back(s.instruction.object_noun);
  }
  return net::Tokenizer::build(texts);
}

LoadedSample prepare_sample(io::Sample s, const net::Tokenizer& tok, const RunConfig& cfg) {
  LoadedSample out;
  out.geometry = net::build_point_geometry(s.cloud, cfg.model);
  out.tokens = tok.encode(instruction_text(s, cfg.train.granularity), cfg.model.n_l);
  out.target = s.target().transpose();
  out.sample = std::move(s);
  return out;
}

std::vector<int> validation_indices(std::span<const io::Sample> train, double fraction, int pair_count,
                                    uint64_t seed) {
  std::map<std::pair<std::string, int>, std::vector<int>> groups;
  for (std::size_t i = 0; i < train.size(); ++i)
    groups[{train[i].object_class, train[i].affordance_index}].push_back(static_cast<int>(i));
  std::vector<int> out;
  uint64_t ordinal = 0;
  for (auto& [key, members] : groups) {
    const int size = static_cast<int>(members.size());
    const int hold = std::max(0, std::min(static_cast<int>(std::floor(fraction * size)), size - pair_count));
    Rng rng(derive_seed(seed, 0x76616c, ordinal++));
    rng.shuffle(members.begin(), members.end());
    out.insert(out.end(), members.begin(), members.begin() + hold);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset load_dataset(const fs::path& root, const RunConfig& cfg, const net::Tokenizer* tokenizer) {
  Dataset d;
  d.manifest = io::read_manifest(root);
  io::validate_manifest(root, d.manifest, cfg.train.pair_count);
  if (d.manifest.n_points != cfg.data.n_points || d.manifest.image_size != cfg.data.image_size)
    throw io::ValidationError("dataset dimensions (" + std::to_string(d.manifest.n_points) + " points, " +
                              std::to_string(d.manifest.image_size) + " px) do not match the config (" +
                              std::to_string(cfg.data.n_points) + ", " + std::to_string(cfg.data.image_size) + ")");

  auto read_subset = [&](const std::string& name) {
    const auto recs = d.manifest.subset(name);
    std::vector<io::Sample> out(recs.size());
    parallel_for(recs.size(), [&](std::size_t i) { out[i] = io::read_sample(root, *recs[i], d.manifest); });
    return out;
  };
  std::vector<io::Sample> train = read_subset("train");
  std::vector<io::Sample> test = read_subset("test");
  d.tokenizer = tokenizer ? *tokenizer : build_tokenizer(train);

  const std::vector<int> val = validation_indices(train, cfg.train.val_fraction, cfg.train.pair_count, cfg.seed);
  std::vector<char> is_val(train.size(), 0);
  for (int i : val) is_val[static_cast<std::size_t>(i)] = 1;

  auto prepare_all = [&](std::vector<io::Sample>& src, std::vector<LoadedSample>& dst) {
    dst.resize(src.size());
    parallel_for(src.size(), [&](std::size_t i) { dst[i] = prepare_sample(std::move(src[i]), d.tokenizer, cfg); });
  };
  std::vector<io::Sample> train_part, val_part;
  for (std::size_t i = 0; i < train.size(); ++i) (is_val[i] ? val_part : train_part).push_back(std::move(train[i]));
  prepare_all(train_part, d.train);
  prepare_all(val_part, d.val);
  prepare_all(test, d.test);
  return d;
}

// ---------------------------------------------------------------------------
// steps

double accumulate_gradients(net::Model& model, std::span<const net::PairInput> batch, std::span<const Mat> targets,
                            const RunConfig& cfg) {
  model.zero_grad();
  ad::Tape tape;
  net::ForwardOptions opt;
  opt.training = true;
  opt.image_on = cfg.train.image_on;
  const net::ForwardResult res = model.forward(tape, batch, opt);
  if (targets.size() != res.heatmaps.size()) throw std::invalid_argument("accumulate_gradients: one target per pair");
  const std::size_t b = batch.size();
  const std::size_t pairs = res.heatmaps.size() / b;
  ad::Var total;
  for (std::size_t p = 0; p < pairs; ++p) {
    std::span<const ad::Var> slice(res.heatmaps.data() + p * b, b);
    ad::Var pred = b == 1 ? slice[0] : ad::concat_rows(slice);
    Mat y(static_cast<Eigen::Index>(b), pred.cols());
    for (std::size_t i = 0; i < b; ++i) y.row(static_cast<Eigen::Index>(i)) = targets[p * b + i];
    ad::Var l = loss::total_loss(pred, y, cfg.loss);
    total = p == 0 ? l : ad::add(total, l);
  }
  tape.backward(total);
  return total.value()(0, 0);
}

// ---------------------------------------------------------------------------
// trainer

Trainer::Trainer(RunConfig cfg, std::shared_ptr<const Dataset> data) : cfg_(std::move(cfg)), data_(std::move(data)) {
  if (data_->train.empty()) throw io::ValidationError("training pool is empty");
  model_ = std::make_unique<net::Model>(cfg_.model, data_->tokenizer.vocab_size(), cfg_.seed);
  std::vector<io::PairingSampler::Key> keys;
  for (const LoadedSample& s : data_->train) keys.push_back({s.sample.object_class, s.sample.affordance_index});
  sampler_ = std::make_unique<io::PairingSampler>(std::move(keys), io::PairingMode::kTrain, cfg_.train.pair_count,
                                                  cfg_.seed);
  const int pool = static_cast<int>(data_->train.size());
  steps_per_epoch_ = (pool + cfg_.train.batch_size - 1) / cfg_.train.batch_size;
  total_steps_ = cfg_.train.epochs * steps_per_epoch_;
  if (cfg_.train.max_steps > 0) total_steps_ = std::min(total_steps_, cfg_.train.max_steps);
  if (cfg_.train.warmup_steps >= total_steps_)
    throw ConfigError("train.warmup_steps (" + std::to_string(cfg_.train.warmup_steps) +
                      ") must be smaller than the total step count (" + std::to_string(total_steps_) + ")");
}

std::vector<io::PairingItem> Trainer::batch_for(int step) const {
  const int epoch = step / steps_per_epoch_;
  const int b = step % steps_per_epoch_;
  if (epoch != cached_epoch_) {
    cached_items_ = sampler_->epoch(epoch);
    cached_epoch_ = epoch;
  }
  const auto begin = static_cast<std::size_t>(b) * static_cast<std::size_t>(cfg_.train.batch_size);
  const auto end = std::min(begin + static_cast<std::size_t>(cfg_.train.batch_size), cached_items_.size());
  return {cached_items_.begin() + static_cast<std::ptrdiff_t>(begin),
          cached_items_.begin() + static_cast<std::ptrdiff_t>(end)};
}

StepRecord Trainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<io::PairingItem> items = batch_for(state_.step);
  std::vector<net::PairInput> batch;
  for (const io::PairingItem& it : items) {
    const LoadedSample& img = data_->train[static_cast<std::size_t>(it.image)];
    net::PairInput in{&img.sample.image, img.tokens, {}};
    for (int c : it.clouds) in.clouds.push_back(&data_->train[static_cast<std::size_t>(c)].geometry);
    batch.push_back(std::move(in));
  }
  const std::size_t b = items.size();
  const std::size_t pairs = static_cast<std::size_t>(cfg_.train.pair_count);
  std::vector<Mat> targets(b * pairs);
  for (std::size_t p = 0; p < pairs; ++p)
    for (std::size_t i = 0; i < b; ++i)
      targets[p * b + i] = data_->train[static_cast<std::size_t>(items[i].clouds[p])].target;

  StepRecord rec;
  rec.step = state_.step;
  rec.epoch = state_.step / steps_per_epoch_;
  rec.lr = lr_at(state_.step, cfg_.train.learning_rate, cfg_.train.warmup_steps, total_steps_);
  rec.loss = accumulate_gradients(*model_, batch, targets, cfg_);
  if (!std::isfinite(rec.loss)) throw DivergenceError("loss is not finite at step " + std::to_string(rec.step));
  const AdamHyper hyper{cfg_.train.beta1, cfg_.train.beta2, cfg_.train.adam_eps, cfg_.train.weight_decay};
  const std::vector<ad::Parameter*> params = model_->trainable_parameters();
  try {
    adamw_step(params, state_.adam, rec.lr, hyper);
  } catch (const NonFiniteGradient& e) {
    throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(rec.step));
  }
  ++state_.step;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

double Trainer::validation_aiou() {
  if (data_->val.empty()) return -1.0;
  const std::vector<Mat> preds = eval::predict(*model_, data_->val, cfg_.train.image_on, cfg_.eval.batch_size);
  const metrics::MetricReport r = eval::score(data_->val, preds, data_->manifest.affordances);
  return r.overall.aiou;
}

void Trainer::save(const fs::path& dir) { save_checkpoint(dir, *model_, state_, data_->tokenizer, cfg_.snapshot()); }

void Trainer::load(const fs::path& dir) {
  CheckpointInfo info = load_checkpoint(dir, *model_);
  if (info.vocabulary != data_->tokenizer.words())
    throw io::FormatError(io::FormatErrc::kShapeMismatch, "checkpoint vocabulary differs from the dataset's");
  state_ = std::move(info.state);
}

FitResult Trainer::fit(const fs::path& out_dir, const std::function<void(const StepRecord&)>& on_step) {
  FitResult res;
  res.total_steps = total_steps_;
  const bool persist = !out_dir.empty();
  std::ofstream log;
  if (persist) {
    fs::create_directories(out_dir);
    const fs::path log_path = out_dir / "train_log.ndjson";
    std::vector<std::string> kept;
    if (cfg_.train.resume && fs::exists(out_dir / "last" / "manifest.json")) {
      load(out_dir / "last");
      if (fs::exists(log_path)) {
        std::istringstream in(io::read_text(log_path));
        std::string line;
        while (std::getline(in, line))
          if (!line.empty() && json::parse(line).at("step").get<int>() < state_.step) kept.push_back(line);
      }
    }
    log.open(log_path, std::ios::trunc);
    for (const std::string& l : kept) log << l << "\n";
  }
  res.frozen_hash_start = model_->frozen_hash();

  while (state_.step < total_steps_) {
    StepRecord rec;
    try {
      rec = step();
    } catch (const DivergenceError&) {
      if (persist) save(out_dir / "last_good");
      throw;
    }
    res.log.push_back(rec);
    if (on_step) on_step(rec);
    if (persist) {
      log << json{{"step", rec.step}, {"epoch", rec.epoch}, {"lr", rec.lr}, {"loss", rec.loss}, {"wall_ms", rec.wall_ms}}
                 .dump()
          << "\n"
          << std::flush;
      const bool epoch_end = state_.step % steps_per_epoch_ == 0 || state_.step == total_steps_;
      if (epoch_end && !data_->val.empty()) {
        const double a = validation_aiou();
        if (a > state_.best_val_aiou) {
          state_.best_val_aiou = a;
          state_.best_step = state_.step;
          save(out_dir / "best");
        }
      }
      if (epoch_end) save(out_dir / "last");
    }
  }
  if (persist && data_->val.empty()) save(out_dir / "best");
  res.best_val_aiou = state_.best_val_aiou;
  res.frozen_hash_end = model_->frozen_hash();
  return res;
}

}  // namespace afford3d::train
