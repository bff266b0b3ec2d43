#include "afford3d/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "afford3d/generate.hpp"
#include "afford3d/losses.hpp"
#include "afford3d/rng.hpp"

namespace afford3d::gradcheck {

Report check(net::Model& model, const Objective& objective, const Options& opt) {
  const std::vector<ad::Parameter*> params = model.trainable_parameters();
  objective(true);
  std::vector<ad::Mat> grads;
  std::vector<uint64_t> offsets{0};
  for (const ad::Parameter* p : params) {
    grads.push_back(p->grad);
    offsets.push_back(offsets.back() + static_cast<uint64_t>(p->value.size()));
  }
  Report rep;
  Rng rng(opt.seed);
  for (int k = 0; k < opt.probes; ++k) {
    const uint64_t flat = rng.below(offsets.back());
    const auto pi = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
    const auto idx = static_cast<Eigen::Index>(flat - offsets[pi]);
    ad::Parameter& p = *params[pi];
    const double orig = p.value.data()[idx];
    p.value.data()[idx] = orig + opt.step;
    const double up = objective(false);
    p.value.data()[idx] = orig - opt.step;
    const double down = objective(false);
    p.value.data()[idx] = orig;

    Probe pr;
    pr.param = p.name;
    pr.index = static_cast<int>(idx);
    pr.analytic = grads[pi].data()[idx];
    pr.numeric = (up - down) / (2.0 * opt.step);
    const double denom = std::max({std::abs(pr.analytic), std::abs(pr.numeric), opt.abs_floor});
    pr.rel_error = std::abs(pr.analytic - pr.numeric) / denom;
    pr.pass = pr.rel_error < opt.rel_tol;
    rep.passed += pr.pass ? 1 : 0;
    rep.max_rel_error = std::max(rep.max_rel_error, pr.rel_error);
    rep.probes.push_back(std::move(pr));
  }
  rep.pass_fraction = opt.probes > 0 ? static_cast<double>(rep.passed) / opt.probes : 1.0;
  rep.ok = rep.pass_fraction >= opt.required_pass_fraction;
  return rep;
}

namespace {

struct BufferGuard {
  explicit BufferGuard(net::Model& m)
      : mean(m.param("head.bn.running_mean")),
        var(m.param("head.bn.running_var")),
        saved_mean(mean.value),
        saved_var(var.value) {}
  ~BufferGuard() {
    mean.value = saved_mean;
    var.value = saved_var;
  }
  ad::Parameter& mean;
  ad::Parameter& var;
  ad::Mat saved_mean, saved_var;
};

}  // namespace

double Fixture::loss(bool backward) {
  BufferGuard guard(*model);
  if (backward) return train::accumulate_gradients(*model, batch, targets, config);
  ad::Tape tape(false);
  net::ForwardOptions opt;
  opt.training = true;
  const net::ForwardResult res = model->forward(tape, batch, opt);
  const std::size_t b = batch.size();
  double total = 0.0;
  for (std::size_t p = 0; p * b < res.heatmaps.size(); ++p) {
    ad::Mat pred(static_cast<Eigen::Index>(b), res.heatmaps[0].cols());
    ad::Mat y(pred.rows(), pred.cols());
    for (std::size_t i = 0; i < b; ++i) {
      pred.row(static_cast<Eigen::Index>(i)) = res.heatmaps[p * b + i].value();
      y.row(static_cast<Eigen::Index>(i)) = targets[p * b + i];
    }
    total += loss::total_loss(pred, y, config.loss);
  }
  return total;
}

double Fixture::output_sum(bool backward) {
  BufferGuard guard(*model);
  model->zero_grad();
  ad::Tape tape(backward);
  net::ForwardOptions opt;
  opt.training = true;
  const net::ForwardResult res = model->forward(tape, batch, opt);
  std::vector<ad::Var> sums;
  for (const ad::Var& h : res.heatmaps) sums.push_back(ad::sum(h));
  ad::Var total = ad::sum(ad::concat_cols(sums));
  if (backward) tape.backward(total);
  return total.value()(0, 0);
}

Fixture make_fixture(uint64_t seed, const std::string& preset) {
  Fixture f;
  apply_preset(f.config, preset);
  f.config.seed = seed;
  f.config.train.pair_count = 2;
  f.config.validate();

  synth::DataConfig dc = f.config.data;
  const std::vector<synth::GroupKey> groups{{"mug", 0}, {"knife", 3}};
  f.data = std::make_shared<train::Dataset>();
  std::vector<io::Sample> raw;
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (int k = 0; k < 2; ++k)
      raw.push_back(synth::build_sample(dc, groups[g], "train", static_cast<int>(g) * 2 + k, seed));
  f.data->tokenizer = train::build_tokenizer(raw);
  f.data->manifest.affordances = dc.affordances;
  for (io::Sample& s : raw) f.data->train.push_back(train::prepare_sample(std::move(s), f.data->tokenizer, f.config));

  f.model = std::make_unique<net::Model>(f.config.model, f.data->tokenizer.vocab_size(), seed);
  const auto& t = f.data->train;
  f.batch = {{&t[0].sample.image, t[0].tokens, {&t[0].geometry, &t[1].geometry}},
             {&t[2].sample.image, t[2].tokens, {&t[3].geometry, &t[2].geometry}}};
  // Cloud-major order: pair (i, p) at p * B + i.
  f.targets = {t[0].target, t[3].target, t[1].target, t[2].target};
  return f;
}

}  // namespace afford3d::gradcheck
