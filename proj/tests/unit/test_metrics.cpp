#include <doctest.h>

#include <cmath>
#include <vector>

#include "afford3d/metrics.hpp"
#include "afford3d/rng.hpp"
#include "oracles.hpp"

using namespace afford3d;
using V = std::vector<double>;

namespace {

void random_instance(Rng& rng, V& p, V& g) {
  p.assign(64, 0.0);
  g.assign(64, 0.0);
  for (int i = 0; i < 64; ++i) {
    // Every other instance uses a coarse grid so ties are common.
    p[static_cast<std::size_t>(i)] = rng.uniform();
    const double u = rng.uniform();
    g[static_cast<std::size_t>(i)] = u < 0.55 ? 0.0 : u < 0.75 ? 1.0 : rng.uniform();
  }
}

}  // namespace

TEST_CASE("metrics agree with brute force on random instances") {
  Rng rng(2024);
  for (int t = 0; t < 200; ++t) {
    V p, g;
    random_instance(rng, p, g);
    if (t % 2 == 1)
      for (double& x : p) x = std::round(x * 10) / 10;
    const auto a = metrics::auc(p, g), ao = oracle::auc_pairs(p, g);
    REQUIRE(a.has_value() == ao.has_value());
    if (a) CHECK(std::abs(*a - *ao) < 1e-9);
    CHECK(std::abs(metrics::aiou(p, g) - oracle::aiou_thresholds(p, g)) < 1e-9);
    CHECK(std::abs(*metrics::sim(p, g) - *oracle::sim_hist(p, g)) < 1e-9);
    CHECK(std::abs(metrics::mae(p, g) - oracle::mae_mean(p, g)) < 1e-9);
  }
}

TEST_CASE("AUC examples") {
  const V g{1, 1, 0, 0};
  CHECK(*metrics::auc(V{0.8, 0.7, 0.2, 0.1}, g) == 1.0);
  CHECK(*metrics::auc(V{0.4, 0.4, 0.4, 0.4}, g) == 0.5);
  CHECK(*metrics::auc(V{0.9, 0.4, 0.6, 0.1}, g) == 0.75);
  CHECK_FALSE(metrics::auc(V{0.1, 0.2}, V{1, 1}).has_value());
  CHECK_FALSE(metrics::auc(V{0.1, 0.2}, V{0, 0}).has_value());
}

TEST_CASE("aIoU examples") {
  const V g{1, 1, 0, 0};
  CHECK(metrics::aiou(g, g) == 1.0);
  CHECK(metrics::aiou(V{0, 0, 0, 0}, g) == 0.0);
  // Thresholds 0.05..0.40 select {0,1,2}: IoU 2/3; 0.45..0.60 select {0,2}:
  // IoU 1/3; above 0.60 nothing: IoU 0.
  const double expected = (8 * (2.0 / 3.0) + 4 * (1.0 / 3.0)) / 19.0;
  CHECK(std::abs(metrics::aiou(V{0.6, 0.4, 0.6, 0.0}, g) - expected) < 1e-15);
  CHECK(std::abs(expected - 20.0 / 57.0) < 1e-15);
  CHECK(metrics::aiou(V{0, 0}, V{0, 0}) == 1.0);
}

TEST_CASE("SIM examples") {
  CHECK(std::abs(*metrics::sim(V{0.2, 0.4, 0.0}, V{0.5, 1.0, 0.0}) - 1.0) < 1e-15);
  CHECK(*metrics::sim(V{0, 1}, V{1, 0}) == 0.0);
  CHECK(*metrics::sim(V{0.5, 0.5}, V{1, 0}) == 0.5);
  CHECK_FALSE(metrics::sim(V{0.5, 0.5}, V{0, 0}).has_value());
  CHECK(*metrics::sim(V{0, 0}, V{1, 0}) == 0.0);
}

TEST_CASE("MAE examples") {
  CHECK(metrics::mae(V{0.3, 0.7}, V{0.3, 0.7}) == 0.0);
  CHECK(std::abs(metrics::mae(V{0.45, 0.65, 0.35}, V{0.5, 0.6, 0.4}) - 0.05) < 1e-15);
  CHECK(std::abs(metrics::mae(V{0.2, 0.8}, V{0.0, 1.0}) - 0.2) < 1e-15);
}

TEST_CASE("invariances and ranges") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    V p, g;
    random_instance(rng, p, g);
    V scaled = p;
    for (double& x : scaled) x *= 3.7;
    CHECK(std::abs(*metrics::auc(scaled, g) - *metrics::auc(p, g)) < 1e-12);
    CHECK(std::abs(*metrics::sim(scaled, g) - *metrics::sim(p, g)) < 1e-12);
    const double a = metrics::aiou(p, g), s = *metrics::sim(p, g), u = *metrics::auc(p, g);
    CHECK((a >= 0 && a <= 1 && s >= 0 && s <= 1 && u >= 0 && u <= 1));
    CHECK(metrics::mae(p, g) >= 0);
  }
}

TEST_CASE("aIoU does not increase as mass leaves the gt support") {
  const V g{1, 1, 1, 0, 0, 0};
  V p{0.9, 0.9, 0.9, 0.0, 0.0, 0.0};
  double prev = metrics::aiou(p, g);
  for (int step = 0; step < 9; ++step) {
    p[0] -= 0.1;
    p[3] += 0.1;
    const double cur = metrics::aiou(p, g);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}

TEST_CASE("report aggregates per-sample metrics") {
  Rng rng(6);
  std::vector<metrics::SampleMetrics> rows;
  std::vector<std::string> aff;
  double auc_sum = 0, aiou_sum = 0, mae_sum = 0;
  int auc_n = 0;
  for (int t = 0; t < 8; ++t) {
    V p, g;
    random_instance(rng, p, g);
    if (t == 3) g.assign(64, 0.0);
    rows.push_back(metrics::score_sample(p, g));
    aff.push_back(t % 2 ? "grasp" : "cut");
    if (auto a = oracle::auc_pairs(p, g)) auc_sum += *a, ++auc_n;
    aiou_sum += oracle::aiou_thresholds(p, g);
    mae_sum += oracle::mae_mean(p, g);
  }
  const metrics::MetricReport rep = metrics::build_report(rows, aff);
  CHECK(rep.overall.samples == 8);
  CHECK(rep.overall.auc_skipped == 1);
  CHECK(rep.overall.sim_skipped == 1);
  CHECK(std::abs(rep.overall.auc - auc_sum / auc_n) < 1e-12);
  CHECK(std::abs(rep.overall.aiou - aiou_sum / 8) < 1e-12);
  CHECK(std::abs(rep.overall.mae - mae_sum / 8) < 1e-12);
  CHECK(rep.per_affordance.at("grasp").samples == 4);
  CHECK(rep.per_affordance.at("cut").samples == 4);
}
