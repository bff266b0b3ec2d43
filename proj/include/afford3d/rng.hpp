#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace afford3d {

// splitmix64 finalizer; used to derive independent stream seeds.
uint64_t mix64(uint64_t x);

// Seed for a named sub-stream, e.g. derive_seed(run_seed, 7, sample_index).
uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0);

// FNV-1a over raw bytes. Stable across platforms and runs.
uint64_t fnv1a64(std::span<const unsigned char> bytes, uint64_t h = 1469598103934665603ull);
uint64_t fnv1a64(std::string_view s);

// Deterministic generator with portable uniform/normal draws (the std
// distributions are implementation-defined, so they are not used here).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n).
  uint64_t below(uint64_t n);
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace afford3d
