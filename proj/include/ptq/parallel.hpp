#pragma once

#include <cstddef>
#include <functional>

namespace ptq {

// Worker count used when a caller passes jobs == 0: QF_JOBS if set, else 1.
std::size_t default_jobs();

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Tasks must write to
// disjoint outputs; the first exception thrown is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace ptq
