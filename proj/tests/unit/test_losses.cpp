#include <doctest.h>

#include <cmath>

#include "afford3d/losses.hpp"
#include "afford3d/rng.hpp"

using namespace afford3d;
using loss::LossConfig;
using loss::Mat;

namespace {

Mat row(std::initializer_list<double> v) {
  Mat m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

Mat random_probs(Eigen::Index b, Eigen::Index n, uint64_t seed, double lo = 0.02, double hi = 0.98) {
  Rng rng(seed);
  Mat m(b, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

double bce(const Mat& p, const Mat& y) {
  double s = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double a = p.data()[i], t = y.data()[i];
    s += -(t * std::log(a) + (1 - t) * std::log(1 - a));
  }
  return s / static_cast<double>(p.size());
}

}  // namespace

TEST_CASE("focal loss hand values") {
  const LossConfig cfg;
  const double expected = -0.25 * 0.25 * std::log(0.5);
  CHECK(std::abs(loss::focal_loss(row({0.5}), row({1.0}), cfg) - 0.04332) < 1e-5);
  CHECK(std::abs(loss::focal_loss(row({0.5, 0.5, 0.5}), row({1, 1, 1}), cfg) - expected) < 1e-15);
  CHECK(loss::focal_loss(row({1.0, 0.0}), row({1.0, 0.0}), cfg) < 1e-12);
}

TEST_CASE("focal loss with gamma 0, alpha 0.5 is half the BCE") {
  LossConfig cfg;
  cfg.gamma = 0.0;
  cfg.alpha = 0.5;
  const Mat p = random_probs(3, 50, 1);
  const Mat y = random_probs(3, 50, 2, 0.0, 1.0);
  CHECK(std::abs(loss::focal_loss(p, y, cfg) - 0.5 * bce(p, y)) < 1e-10);
}

TEST_CASE("dice loss") {
  LossConfig cfg;
  CHECK(loss::dice_loss(row({1, 0}), row({1, 1}), cfg) == 0.25);
  CHECK(loss::dice_loss(row({0, 0, 0}), row({0, 0, 0}), cfg) == 0.0);
  cfg.epsilon = 1e-12;
  CHECK(loss::dice_loss(row({0.3, 0.9, 0.0}), row({0.3, 0.9, 0.0}), cfg) < 1e-10);
  // Per-sample value averaged over the batch.
  LossConfig one;
  Mat p(2, 2), y(2, 2);
  p << 1, 0, 0.5, 0.5;
  y << 1, 1, 1, 0;
  const double s0 = 1 - 3.0 / 4.0, s1 = 1 - (2 * 0.5 + 1) / (0.5 + 1 + 1);
  CHECK(std::abs(loss::dice_loss(p, y, one) - 0.5 * (s0 + s1)) < 1e-15);
}

TEST_CASE("total loss weights") {
  const Mat p = random_probs(2, 30, 3), y = random_probs(2, 30, 4, 0.0, 1.0);
  LossConfig cfg;
  const double f = loss::focal_loss(p, y, cfg), d = loss::dice_loss(p, y, cfg);
  cfg.omega_f = 0;
  CHECK(loss::total_loss(p, y, cfg) == d);
  cfg.omega_f = 1;
  cfg.omega_d = 0;
  CHECK(loss::total_loss(p, y, cfg) == f);
  LossConfig doubled;
  doubled.omega_f = doubled.omega_d = 2;
  CHECK(std::abs(loss::total_loss(p, y, doubled) - 2 * loss::total_loss(p, y, LossConfig{})) < 1e-12);
  LossConfig bad;
  bad.omega_d = -1;
  CHECK_THROWS_AS(loss::total_loss(p, y, bad), loss::LossError);
  CHECK_THROWS_AS(loss::total_loss(p, Mat::Zero(2, 29), LossConfig{}), loss::LossError);
}

TEST_CASE("total loss is nonnegative and permutation invariant") {
  const LossConfig cfg;
  for (uint64_t s = 0; s < 20; ++s) {
    const Mat p = random_probs(1, 40, 10 + s, 0.0, 1.0), y = random_probs(1, 40, 100 + s, 0.0, 1.0);
    CHECK(loss::total_loss(p, y, cfg) >= 0.0);
    Mat pr = p.rowwise().reverse(), yr = y.rowwise().reverse();
    CHECK(std::abs(loss::focal_loss(pr, yr, cfg) - loss::focal_loss(p, y, cfg)) < 1e-14);
    CHECK(std::abs(loss::dice_loss(pr, yr, cfg) - loss::dice_loss(p, y, cfg)) < 1e-14);
  }
}

TEST_CASE("focal contribution decreases in p for y = 1") {
  const LossConfig cfg;
  double prev = INFINITY;
  for (int i = 1; i < 100; ++i) {
    const double v = loss::focal_loss(row({i / 100.0}), row({1.0}), cfg);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("analytic loss gradients match central differences") {
  const LossConfig cfg;
  const Mat p = random_probs(2, 16, 7), y = random_probs(2, 16, 8, 0.0, 1.0);
  const Mat g = loss::total_loss_grad(p, y, cfg);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Mat a = p, b = p;
    a.data()[i] += h;
    b.data()[i] -= h;
    const double num = (loss::total_loss(a, y, cfg) - loss::total_loss(b, y, cfg)) / (2 * h);
    CHECK(std::abs(num - g.data()[i]) <= 1e-6 * std::max(std::abs(num), 1e-3));
  }
}

TEST_CASE("tape loss op agrees with the plain functions") {
  const LossConfig cfg;
  const Mat p = random_probs(3, 10, 9), y = random_probs(3, 10, 10, 0.0, 1.0);
  ad::Tape tape;
  ad::Var v = tape.leaf(p, true);
  ad::Var l = loss::total_loss(v, y, cfg);
  tape.backward(l);
  CHECK(std::abs(l.value()(0, 0) - loss::total_loss(p, y, cfg)) < 1e-15);
  CHECK((tape.grad(v) - loss::total_loss_grad(p, y, cfg)).cwiseAbs().maxCoeff() < 1e-15);
}
