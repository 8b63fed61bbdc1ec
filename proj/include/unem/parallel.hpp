#pragma once
#include <cstddef>
#include <functional>

namespace unem {

// Worker count: UNEM_THREADS if set and positive, else the hardware
// concurrency (at least 1).
std::size_t worker_count();

// Calls fn(i) for i in [0, n) on up to worker_count() threads. Each index
// runs exactly once; callers write results into per-index slots and reduce
// afterwards in index order. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace unem
