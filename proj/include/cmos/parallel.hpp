#pragma once

#include <cstddef>
#include <functional>

namespace cmos {

/// Worker count: CMOS_THREADS when set to a positive integer, else the hardware
/// concurrency (at least 1).
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Iterations must be
/// independent. The first exception thrown by any iteration is rethrown. Calls made
/// from inside a worker run serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace cmos
