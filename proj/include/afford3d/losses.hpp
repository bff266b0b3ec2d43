#pragma once

// Weighted focal + dice objective on point-wise heatmaps.
//
// Heatmap batches are (B, N) matrices: one row per sample, one column per
// point (the trailing singleton channel of a (B, N, 1) tensor is implicit).
// Targets are soft probabilities in [0, 1].

#include <stdexcept>

#include "afford3d/autograd.hpp"

namespace afford3d::loss {

using ad::Mat;

struct LossConfig {
  double omega_f = 1.0;
  double omega_d = 1.0;
  double gamma = 2.0;
  double alpha = 0.25;
  double epsilon = 1.0;

  void validate() const;
};

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kProbClamp = 1e-7;

// Mean over all points of -[a y (1-p)^g log p + (1-a)(1-y) p^g log(1-p)],
// p clamped to [1e-7, 1-1e-7].
double focal_loss(const Mat& p, const Mat& y, const LossConfig& cfg);
// 1 - (2 sum p y + eps) / (sum p^2 + sum y^2 + eps) per sample, batch mean.
double dice_loss(const Mat& p, const Mat& y, const LossConfig& cfg);
double total_loss(const Mat& p, const Mat& y, const LossConfig& cfg);

// Analytic d/dp of each loss.
Mat focal_loss_grad(const Mat& p, const Mat& y, const LossConfig& cfg);
Mat dice_loss_grad(const Mat& p, const Mat& y, const LossConfig& cfg);
Mat total_loss_grad(const Mat& p, const Mat& y, const LossConfig& cfg);

// Tape op: scalar total loss of prediction `p` against constant target `y`.
ad::Var total_loss(ad::Var p, const Mat& y, const LossConfig& cfg);

}  // namespace afford3d::loss
