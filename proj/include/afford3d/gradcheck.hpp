#pragma once

// Finite-difference verification of the network's analytic gradients.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "afford3d/config.hpp"
#include "afford3d/netblocks.hpp"
#include "afford3d/trainer.hpp"

namespace afford3d::gradcheck {

struct Options {
  int probes = 500;
  double step = 1e-3;
  double rel_tol = 1e-4;
  // Denominator floor of the relative error, so coordinates whose gradient
  // is at round-off level compare absolutely.
  double abs_floor = 1e-8;
  double required_pass_fraction = 0.99;
  uint64_t seed = 7;
};

struct Probe {
  std::string param;
  int index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = false;
};

struct Report {
  std::vector<Probe> probes;
  int passed = 0;
  double pass_fraction = 0.0;
  double max_rel_error = 0.0;
  bool ok = false;
};

// Objective: evaluates the scalar; when `backward` is set it must also leave
// d(objective)/d(param) in every trainable parameter's grad.
using Objective = std::function<double(bool backward)>;

// Probes coordinates uniformly over all trainable scalars and compares the
// analytic gradient with the central difference (f(x+h) - f(x-h)) / 2h.
Report check(net::Model& model, const Objective& objective, const Options& opt);

// A tiny model with a fixed batch of two images, each paired with two
// clouds, built from synthetic data in memory.
struct Fixture {
  RunConfig config;
  std::shared_ptr<train::Dataset> data;
  std::unique_ptr<net::Model> model;
  std::vector<net::PairInput> batch;
  std::vector<ad::Mat> targets;

  // Summed paired training loss (batch norm in training mode). Running
  // statistics are restored afterwards so repeated calls are pure.
  double loss(bool backward);
  // Sum of all heatmap entries.
  double output_sum(bool backward);
};

Fixture make_fixture(uint64_t seed, const std::string& preset = "tiny");

}  // namespace afford3d::gradcheck
