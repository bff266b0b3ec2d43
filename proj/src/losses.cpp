#include "afford3d/losses.hpp"

#include <algorithm>
#include <cmath>

namespace afford3d::loss {

void LossConfig::validate() const {
  if (omega_f < 0.0 || omega_d < 0.0) throw LossError("loss weights must be non-negative");
  if (gamma < 0.0) throw LossError("focal gamma must be non-negative");
  if (alpha < 0.0 || alpha > 1.0) throw LossError("focal alpha must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw LossError("dice epsilon must be positive");
}

namespace {

void check_shapes(const Mat& p, const Mat& y) {
  if (p.rows() != y.rows() || p.cols() != y.cols()) throw LossError("prediction/target shape mismatch");
  if (p.size() == 0) throw LossError("empty heatmap batch");
}

}  // namespace

double focal_loss(const Mat& p, const Mat& y, const LossConfig& cfg) {
  check_shapes(p, y);
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p.data()[i], kProbClamp, 1.0 - kProbClamp);
    const double t = y.data()[i];
    total -= cfg.alpha * t * std::pow(1.0 - q, cfg.gamma) * std::log(q) +
             (1.0 - cfg.alpha) * (1.0 - t) * std::pow(q, cfg.gamma) * std::log(1.0 - q);
  }
  return total / static_cast<double>(p.size());
}

Mat focal_loss_grad(const Mat& p, const Mat& y, const LossConfig& cfg) {
  check_shapes(p, y);
  Mat g(p.rows(), p.cols());
  const double inv_n = 1.0 / static_cast<double>(p.size());
  const double a = cfg.alpha, gm = cfg.gamma;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double raw = p.data()[i];
    if (raw < kProbClamp || raw > 1.0 - kProbClamp) {
      g.data()[i] = 0.0;
      continue;
    }
    const double q = raw, t = y.data()[i];
    // d/dq of (1-q)^g log q and q^g log(1-q); pow(.., g-1) guarded for g = 0.
    const double pos = (gm == 0.0 ? 0.0 : -gm * std::pow(1.0 - q, gm - 1.0) * std::log(q)) +
                       std::pow(1.0 - q, gm) / q;
    const double neg = (gm == 0.0 ? 0.0 : gm * std::pow(q, gm - 1.0) * std::log(1.0 - q)) -
                       std::pow(q, gm) / (1.0 - q);
    g.data()[i] = -(a * t * pos + (1.0 - a) * (1.0 - t) * neg) * inv_n;
  }
  return g;
}

double dice_loss(const Mat& p, const Mat& y, const LossConfig& cfg) {
  check_shapes(p, y);
  double total = 0.0;
  for (Eigen::Index b = 0; b < p.rows(); ++b) {
    const double inter = p.row(b).dot(y.row(b));
    const double denom = p.row(b).squaredNorm() + y.row(b).squaredNorm() + cfg.epsilon;
    total += 1.0 - (2.0 * inter + cfg.epsilon) / denom;
  }
  return total / static_cast<double>(p.rows());
}

Mat dice_loss_grad(const Mat& p, const Mat& y, const LossConfig& cfg) {
  check_shapes(p, y);
  Mat g(p.rows(), p.cols());
  const double inv_b = 1.0 / static_cast<double>(p.rows());
  for (Eigen::Index b = 0; b < p.rows(); ++b) {
    const double num = 2.0 * p.row(b).dot(y.row(b)) + cfg.epsilon;
    const double denom = p.row(b).squaredNorm() + y.row(b).squaredNorm() + cfg.epsilon;
    g.row(b) = -(2.0 * y.row(b) * denom - num * 2.0 * p.row(b)) / (denom * denom) * inv_b;
  }
  return g;
}

double total_loss(const Mat& p, const Mat& y, const LossConfig& cfg) {
  cfg.validate();
  return cfg.omega_f * focal_loss(p, y, cfg) + cfg.omega_d * dice_loss(p, y, cfg);
}

Mat total_loss_grad(const Mat& p, const Mat& y, const LossConfig& cfg) {
  cfg.validate();
  return cfg.omega_f * focal_loss_grad(p, y, cfg) + cfg.omega_d * dice_loss_grad(p, y, cfg);
}

ad::Var total_loss(ad::Var p, const Mat& y, const LossConfig& cfg) {
  ad::Tape* t = p.tape;
  Mat value(1, 1);
  value(0, 0) = total_loss(p.value(), y, cfg);
  return t->record(std::move(value), {p}, [t, p, y, cfg](const Mat& g) {
    t->accumulate(p.id, total_loss_grad(p.value(), y, cfg) * g(0, 0));
  });
}

}  // namespace afford3d::loss
