#pragma once

#include <cstddef>
#include <functional>

namespace afford3d {

// Worker count: AFFORD3D_THREADS if set and positive, else the hardware
// concurrency (at least 1).
int worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Indices are
// claimed in increasing order; the first exception is rethrown after all
// workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace afford3d

namespace afford3d {

// Keeps large temporaries on the heap instead of fresh mappings per
// allocation. No-op outside glibc.
void tune_allocator();

}  // namespace afford3d
