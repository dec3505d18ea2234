#pragma once

#include <cstddef>
#include <functional>

namespace permfl {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
/// processed exactly once; callers write results into per-index slots and
/// reduce afterwards in a fixed order. If tasks throw, the exception of the lowest
/// failing index is rethrown on the calling thread after all workers join.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace permfl
