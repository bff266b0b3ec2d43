#pragma once

// Built-in consistency checks run by `afford3d selftest`.

#include <cstdint>
#include <string>
#include <vector>

namespace afford3d::selftest {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Metric implementations against brute-force references on random
// instances plus the hand-computed examples.
std::vector<Check> metric_checks(int instances, uint64_t seed);
// Finite-difference gradient check on the tiny fixture.
Check gradient_check(int probes, uint64_t seed);

}  // namespace afford3d::selftest
