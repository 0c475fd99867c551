#pragma once

#include <cstddef>
#include <functional>

namespace silencio {

// Worker cap: SILENCIO_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_threads();

// Runs fn(i) for i in [0, n). Indices are split into contiguous blocks, one
// per worker; callers write results into pre-sized slots so the outcome is
// independent of scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace silencio
