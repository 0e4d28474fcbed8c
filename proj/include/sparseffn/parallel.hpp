#pragma once

#include <cstddef>
#include <functional>

namespace sparseffn {

// Worker cap for internal parallelism. Defaults to SPARSEFFN_THREADS when set,
// otherwise the hardware concurrency.
void set_num_threads(std::size_t n) noexcept;
std::size_t num_threads() noexcept;

// Splits [0, n) into contiguous chunks and runs fn(begin, end) on each. Every
// index is visited by exactly one worker; runs inline when one worker
// suffices or when called from inside another parallel_for.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 1);

}  // namespace sparseffn
