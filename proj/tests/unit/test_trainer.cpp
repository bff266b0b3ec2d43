#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "afford3d/gradcheck.hpp"
#include "afford3d/trainer.hpp"
#include "test_util.hpp"

using namespace afford3d;
using namespace afford3d::train;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  apply_preset(cfg, "tiny");
  cfg.seed = 3;
  cfg.data.train_count = 24;
  cfg.data.test_count = 4;
  cfg.data.objects = {"mug", "knife"};
  cfg.data.affordances = {"grasp", "cut"};
  cfg.train.epochs = 3;
  cfg.train.batch_size = 4;
  cfg.train.warmup_steps = 2;
  cfg.train.learning_rate = 1e-3;
  cfg.train.val_fraction = 0.2;
  cfg.validate();
  return cfg;
}

// One generated dataset shared by every case in this file.
const fs::path& dataset_root() {
  static testutil::TempDir dir("trainer_data");
  static const bool made = [] {
    synth::generate_dataset(tiny_config().data, 21, dir.path());
    return true;
  }();
  (void)made;
  return dir.path();
}

std::shared_ptr<const Dataset> tiny_dataset(const RunConfig& cfg) {
  return std::make_shared<const Dataset>(load_dataset(dataset_root(), cfg));
}

bool same_parameters(net::Model& a, net::Model& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->name != pb[i]->name || pa[i]->value != pb[i]->value) return false;
  return true;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  const double base = 1e-3;
  CHECK(lr_at(0, base, 10, 110) == 0.0);
  CHECK(std::abs(lr_at(5, base, 10, 110) - 5e-4) < 1e-18);
  CHECK(lr_at(10, base, 10, 110) == base);
  CHECK(std::abs(lr_at(60, base, 10, 110) - 5e-4) < 1e-15);
  CHECK(std::abs(lr_at(35, base, 10, 110) - base * 0.5 * (1 + std::cos(std::numbers::pi / 4))) < 1e-15);
  CHECK(std::abs(lr_at(110, base, 10, 110)) < 1e-18);
  CHECK(std::abs(lr_at(500, base, 10, 110)) < 1e-18);
  CHECK(lr_at(3, base, 0, 100) < base);
  CHECK_THROWS(lr_at(-1, base, 10, 110));
  double prev = 0.0, max_jump = 0.0;
  for (int s = 0; s <= 110; ++s) {
    const double v = lr_at(s, base, 10, 110);
    CHECK(v >= 0.0);
    CHECK(v <= base);
    if (s > 10) CHECK(v <= prev);
    max_jump = std::max(max_jump, std::abs(v - prev));
    prev = v;
  }
  CHECK(max_jump <= base / 10 + 1e-18);
}

TEST_CASE("AdamW update") {
  ad::Parameter p{"w", Mat(1, 2), Mat(1, 2), true};
  ad::Parameter frozen{"f", Mat::Constant(1, 2, 4.0), Mat::Constant(1, 2, 9.0), false};
  std::vector<ad::Parameter*> params{&p, &frozen};
  AdamHyper h;

  SUBCASE("zero gradient without decay leaves values unchanged") {
    p.value << 0.5, -1.5;
    p.zero_grad();
    AdamState st;
    adamw_step(params, st, 0.1, h);
    CHECK(p.value(0, 0) == 0.5);
    CHECK(p.value(0, 1) == -1.5);
    CHECK(frozen.value(0, 0) == 4.0);
    CHECK(st.t == 1);
  }
  SUBCASE("zero gradient with decay shrinks values") {
    p.value << 0.5, -1.5;
    p.zero_grad();
    h.weight_decay = 0.06;
    AdamState st;
    adamw_step(params, st, 0.1, h);
    CHECK(std::abs(p.value(0, 0) - 0.5 * (1 - 0.006)) < 1e-15);
    CHECK(std::abs(p.value(0, 1) + 1.5 * (1 - 0.006)) < 1e-15);
  }
  SUBCASE("three steps follow the scalar recurrence") {
    h.weight_decay = 0.01;
    p.value << 0.3, -0.7;
    const double grads[3][2] = {{0.2, -1.0}, {-0.05, 0.4}, {0.3, 0.3}};
    const double lrs[3] = {1e-2, 5e-3, 2e-3};
    double x[2] = {0.3, -0.7}, m[2] = {0, 0}, v[2] = {0, 0};
    AdamState st;
    for (int t = 0; t < 3; ++t) {
      p.grad << grads[t][0], grads[t][1];
      adamw_step(params, st, lrs[t], h);
      for (int j = 0; j < 2; ++j) {
        x[j] -= lrs[t] * h.weight_decay * x[j];
        m[j] = 0.9 * m[j] + 0.1 * grads[t][j];
        v[j] = 0.999 * v[j] + 0.001 * grads[t][j] * grads[t][j];
        const double mh = m[j] / (1 - std::pow(0.9, t + 1)), vh = v[j] / (1 - std::pow(0.999, t + 1));
        x[j] -= lrs[t] * mh / (std::sqrt(vh) + 1e-8);
      }
      CHECK(std::abs(p.value(0, 0) - x[0]) < 1e-12);
      CHECK(std::abs(p.value(0, 1) - x[1]) < 1e-12);
    }
  }
  SUBCASE("non-finite gradients leave state untouched") {
    p.value << 0.5, -1.5;
    p.grad << 0.1, std::nan("");
    AdamState st;
    CHECK_THROWS_AS(adamw_step(params, st, 0.1, h), NonFiniteGradient);
    CHECK(st.t == 0);
    CHECK(st.m.empty());
    CHECK(p.value(0, 0) == 0.5);
    p.grad << INFINITY, 0.0;
    CHECK_THROWS_AS(adamw_step(params, st, 0.1, h), NonFiniteGradient);
  }
}

TEST_CASE("paired loss is the sum over pair slices") {
  gradcheck::Fixture f = gradcheck::make_fixture(5);
  const RunConfig& cfg = f.config;
  const std::size_t b = f.batch.size();

  // Independent value: forward once, score each slice with the plain loss.
  const Mat mean0 = f.model->param("head.bn.running_mean").value, var0 = f.model->param("head.bn.running_var").value;
  double expected = 0.0;
  {
    ad::Tape tape(false);
    net::ForwardOptions opt;
    opt.training = true;
    const net::ForwardResult r = f.model->forward(tape, f.batch, opt);
    for (std::size_t p = 0; p < 2; ++p) {
      Mat pred(static_cast<Eigen::Index>(b), cfg.model.n_points), y(pred.rows(), pred.cols());
      for (std::size_t i = 0; i < b; ++i) {
        pred.row(static_cast<Eigen::Index>(i)) = r.heatmaps[p * b + i].value();
        y.row(static_cast<Eigen::Index>(i)) = f.targets[p * b + i];
      }
      expected += loss::total_loss(pred, y, cfg.loss);
    }
  }
  f.model->param("head.bn.running_mean").value = mean0;
  f.model->param("head.bn.running_var").value = var0;

  const double got = accumulate_gradients(*f.model, f.batch, f.targets, cfg);
  CHECK(std::abs(got - expected) < 1e-10);
  std::vector<Mat> g1;
  for (ad::Parameter* p : f.model->trainable_parameters()) g1.push_back(p->grad);

  SUBCASE("gradients scale linearly with the loss weights") {
    RunConfig doubled = cfg;
    doubled.loss.omega_f *= 2;
    doubled.loss.omega_d *= 2;
    const double l2 = accumulate_gradients(*f.model, f.batch, f.targets, doubled);
    CHECK(std::abs(l2 - 2 * got) < 1e-10);
    double worst = 0.0;
    std::size_t k = 0;
    for (ad::Parameter* p : f.model->trainable_parameters()) worst = std::max(worst, (p->grad - 2 * g1[k++]).cwiseAbs().maxCoeff());
    CHECK(worst < 1e-8);
  }
  SUBCASE("swapping pair slots changes nothing") {
    std::vector<net::PairInput> swapped = f.batch;
    for (net::PairInput& in : swapped) std::swap(in.clouds[0], in.clouds[1]);
    const std::vector<Mat> targets{f.targets[2], f.targets[3], f.targets[0], f.targets[1]};
    const double l = accumulate_gradients(*f.model, swapped, targets, cfg);
    CHECK(std::abs(l - got) < 1e-10);
    double worst = 0.0;
    std::size_t k = 0;
    for (ad::Parameter* p : f.model->trainable_parameters()) worst = std::max(worst, (p->grad - g1[k++]).cwiseAbs().maxCoeff());
    CHECK(worst < 1e-8);
  }
  SUBCASE("frozen blocks receive no gradient") {
    for (ad::Parameter* p : f.model->parameters())
      if (!p->trainable) CHECK(p->grad.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("single pair per image") {
  RunConfig cfg = tiny_config();
  cfg.train.pair_count = 1;
  Trainer t(cfg, tiny_dataset(cfg));
  for (const io::PairingItem& it : t.batch_for(0)) CHECK(it.clouds.size() == 1);
  const StepRecord r = t.step();
  CHECK(std::isfinite(r.loss));
  CHECK(t.state().step == 1);
}

TEST_CASE("validation split keeps every group trainable") {
  const RunConfig cfg = tiny_config();
  const Dataset d = load_dataset(dataset_root(), cfg);
  CHECK(!d.val.empty());
  CHECK(d.train.size() + d.val.size() == 24);
  std::map<std::pair<std::string, int>, int> left;
  for (const LoadedSample& s : d.train) ++left[{s.sample.object_class, s.sample.affordance_index}];
  for (const auto& [k, n] : left) CHECK(n >= cfg.train.pair_count);
  for (const LoadedSample& s : d.val) CHECK(left.count({s.sample.object_class, s.sample.affordance_index}) == 1);
}

TEST_CASE("fit is deterministic and keeps the backbone frozen") {
  const RunConfig cfg = tiny_config();
  const auto data = tiny_dataset(cfg);
  Trainer a(cfg, data), b(cfg, data);
  const FitResult ra = a.fit({}), rb = b.fit({});
  REQUIRE(ra.log.size() == static_cast<std::size_t>(a.total_steps()));
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].loss == rb.log[i].loss);
    CHECK(ra.log[i].lr == rb.log[i].lr);
  }
  CHECK(same_parameters(a.model(), b.model()));
  CHECK(ra.frozen_hash_start == ra.frozen_hash_end);
  CHECK(ra.log.front().lr == 0.0);
}

TEST_CASE("resuming reproduces an uninterrupted run bitwise") {
  RunConfig cfg = tiny_config();
  const auto data = tiny_dataset(cfg);
  testutil::TempDir dir("resume");

  Trainer full(cfg, data);
  full.fit({});

  SUBCASE("step-level save and load") {
    Trainer first(cfg, data);
    for (int i = 0; i < 4; ++i) first.step();
    first.save(dir / "mid");
    Trainer second(cfg, data);
    second.load(dir / "mid");
    CHECK(second.state().step == 4);
    while (second.state().step < second.total_steps()) second.step();
    CHECK(same_parameters(second.model(), full.model()));
  }
  SUBCASE("interrupted fit resumes from the last epoch") {
    struct Stop {};
    Trainer first(cfg, data);
    const int stop_at = first.steps_per_epoch() + 1;
    try {
      first.fit(dir / "run", [&](const StepRecord& r) {
        if (r.step == stop_at) throw Stop{};
      });
    } catch (const Stop&) {
    }
    CHECK(fs::exists(dir / "run" / "last" / "manifest.json"));
    cfg.train.resume = true;
    Trainer second(cfg, data);
    const FitResult r = second.fit(dir / "run");
    CHECK(r.log.front().step == first.steps_per_epoch());
    CHECK(same_parameters(second.model(), full.model()));
    std::istringstream log(testutil::slurp(dir / "run" / "train_log.ndjson"));
    int lines = 0;
    for (std::string l; std::getline(log, l);) ++lines;
    CHECK(lines == second.total_steps());
    CHECK(fs::exists(dir / "run" / "best" / "manifest.json"));
  }
}

TEST_CASE("checkpoints") {
  const RunConfig cfg = tiny_config();
  const auto data = tiny_dataset(cfg);
  testutil::TempDir dir("ckpt");
  Trainer a(cfg, data);
  for (int i = 0; i < 3; ++i) a.step();
  a.save(dir / "a");

  SUBCASE("round trip restores parameters, state and bytes") {
    Trainer b(cfg, data);
    b.load(dir / "a");
    CHECK(same_parameters(a.model(), b.model()));
    CHECK(b.state().step == 3);
    CHECK(b.state().adam.t == 3);
    CHECK(b.state().adam.m.size() == a.state().adam.m.size());
    b.save(dir / "b");
    CHECK(testutil::slurp(dir / "a" / "manifest.json") == testutil::slurp(dir / "b" / "manifest.json"));
    const CheckpointInfo info = read_checkpoint_info(dir / "a");
    CHECK(info.vocabulary == data->tokenizer.words());
    CHECK(info.config_snapshot == cfg.snapshot());
  }
  SUBCASE("corrupted arrays are detected") {
    const fs::path f = dir / "a" / "params" / "fuse.wq.w.bin";
    std::string bytes = testutil::slurp(f);
    bytes[bytes.size() - 1] ^= 0x01;
    io::write_text(f, bytes);
    Trainer b(cfg, data);
    try {
      b.load(dir / "a");
      FAIL("corruption not detected");
    } catch (const io::FormatError& e) {
      CHECK(e.code() == io::FormatErrc::kChecksum);
    }
  }
  SUBCASE("shape mismatch is detected") {
    RunConfig other = cfg;
    other.model.head_hidden = 7;
    net::Model m(other.model, data->tokenizer.vocab_size(), 1);
    try {
      load_checkpoint(dir / "a", m);
      FAIL("mismatch not detected");
    } catch (const io::FormatError& e) {
      CHECK(e.code() == io::FormatErrc::kShapeMismatch);
    }
  }
}

TEST_CASE("divergence is reported and the last good state kept") {
  RunConfig cfg = tiny_config();
  cfg.train.learning_rate = 1e300;
  cfg.train.warmup_steps = 0;
  const auto data = tiny_dataset(cfg);
  testutil::TempDir dir("diverge");
  Trainer t(cfg, data);
  CHECK_THROWS_AS(t.fit(dir.path()), DivergenceError);
  CHECK(fs::exists(dir / "last_good" / "manifest.json"));
}

TEST_CASE("warmup longer than the run is rejected") {
  RunConfig cfg = tiny_config();
  cfg.train.warmup_steps = 1000;
  CHECK_THROWS_AS(Trainer(cfg, tiny_dataset(cfg)), ConfigError);
}
