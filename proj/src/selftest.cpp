#include "afford3d/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "afford3d/gradcheck.hpp"
#include "afford3d/metrics.hpp"
#include "afford3d/rng.hpp"

namespace afford3d::selftest {

namespace {

using Vec = std::vector<double>;

std::optional<double> brute_auc(const Vec& p, const Vec& g) {
  double good = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (!(g[i] > 0.0) || g[j] > 0.0) continue;
      ++pairs;
      good += p[i] > p[j] ? 1.0 : p[i] == p[j] ? 0.5 : 0.0;
    }
  if (pairs == 0) return std::nullopt;
  return good / static_cast<double>(pairs);
}

double brute_aiou(const Vec& p, const Vec& g) {
  double total = 0.0;
  for (int i = 1; i <= 19; ++i) {
    const double tau = i / 20.0;
    int inter = 0, uni = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const bool a = p[k] >= tau, b = g[k] > 0.0;
      inter += a && b;
      uni += a || b;
    }
    total += uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
  }
  return total / 19.0;
}

std::optional<double> brute_sim(const Vec& p, const Vec& g) {
  double sp = 0.0, sg = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    sp += p[k];
    sg += g[k];
  }
  if (!(sg > 0.0)) return std::nullopt;
  if (!(sp > 0.0)) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::min(p[k] / sp, g[k] / sg);
  return s;
}

double brute_mae(const Vec& p, const Vec& g) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(p[k] - g[k]);
  return s / static_cast<double>(p.size());
}

bool close(std::optional<double> a, std::optional<double> b, double tol) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::abs(*a - *b) <= tol;
}

Check make(const std::string& name, bool pass, const std::string& detail = "") { return {name, pass, detail}; }

}  // namespace

std::vector<Check> metric_checks(int instances, uint64_t seed) {
  std::vector<Check> out;
  Rng rng(seed);
  int bad[4] = {0, 0, 0, 0};
  for (int t = 0; t < instances; ++t) {
    Vec p(64), g(64);
    for (int k = 0; k < 64; ++k) {
      // Coarse values so ties occur.
      p[static_cast<std::size_t>(k)] = std::round(rng.uniform() * 20.0) / 20.0;
      const double u = rng.uniform();
      g[static_cast<std::size_t>(k)] = u < 0.5 ? 0.0 : u < 0.7 ? 1.0 : rng.uniform();
    }
    bad[0] += !close(metrics::auc(p, g), brute_auc(p, g), 1e-9);
    bad[1] += !close(metrics::aiou(p, g), brute_aiou(p, g), 1e-9);
    bad[2] += !close(metrics::sim(p, g), brute_sim(p, g), 1e-9);
    bad[3] += !close(metrics::mae(p, g), brute_mae(p, g), 1e-9);
  }
  const char* names[] = {"auc", "aiou", "sim", "mae"};
  for (int m = 0; m < 4; ++m)
    out.push_back(make(std::string(names[m]) + " vs brute force", bad[m] == 0,
                       std::to_string(bad[m]) + " mismatches in " + std::to_string(instances)));

  const Vec g4{1, 1, 0, 0};
  out.push_back(make("auc hand examples", metrics::auc(g4, g4) == 1.0 &&
                                              metrics::auc(Vec{0.3, 0.3, 0.3, 0.3}, g4) == 0.5 &&
                                              metrics::auc(Vec{0.9, 0.4, 0.6, 0.1}, g4) == 0.75));
  out.push_back(make("aiou hand examples", metrics::aiou(g4, g4) == 1.0 && metrics::aiou(Vec(4, 0.0), g4) == 0.0 &&
                                               std::abs(metrics::aiou(Vec{0.6, 0.4, 0.6, 0.0}, g4) - 20.0 / 57.0) < 1e-15));
  out.push_back(make("sim hand examples", std::abs(*metrics::sim(Vec{2, 2, 0, 0}, g4) - 1.0) < 1e-15 &&
                                              *metrics::sim(Vec{0, 0, 1, 1}, g4) == 0.0 &&
                                              *metrics::sim(Vec{0.5, 0.5}, Vec{1, 0}) == 0.5));
  out.push_back(make("mae hand examples", metrics::mae(g4, g4) == 0.0 &&
                                              std::abs(metrics::mae(Vec{0.6, 0.6, 0.1, 0.1}, Vec{0.5, 0.5, 0.0, 0.0}) - 0.1) < 1e-15 &&
                                              std::abs(metrics::mae(Vec{0.2, 0.8}, Vec{0.0, 1.0}) - 0.2) < 1e-15));
  return out;
}

Check gradient_check(int probes, uint64_t seed) {
  gradcheck::Fixture f = gradcheck::make_fixture(seed);
  gradcheck::Options opt;
  opt.probes = probes;
  opt.seed = seed;
  const gradcheck::Report r = gradcheck::check(*f.model, [&](bool backward) { return f.loss(backward); }, opt);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d/%d probes within %.0e (%.2f%%), max rel error %.3e", r.passed, probes,
                opt.rel_tol, 100.0 * r.pass_fraction, r.max_rel_error);
  return make("gradient check", r.ok, buf);
}

}  // namespace afford3d::selftest
