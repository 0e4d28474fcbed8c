#include "sparseffn/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sparseffn {

namespace {

std::size_t default_threads() noexcept {
  if (const char* env = std::getenv("SPARSEFFN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Set while a thread runs a chunk; nested regions then run inline instead of
// oversubscribing.
thread_local bool in_region = false;

struct RegionGuard {
  bool saved = in_region;
  RegionGuard() noexcept { in_region = true; }
  ~RegionGuard() { in_region = saved; }
};

std::atomic<std::size_t>& thread_cap() {
  static std::atomic<std::size_t> cap{default_threads()};
  return cap;
}

}  // namespace

void set_num_threads(std::size_t n) noexcept { thread_cap().store(n == 0 ? default_threads() : n); }

std::size_t num_threads() noexcept { return thread_cap().load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk) {
  if (n == 0) return;
  const std::size_t by_size = std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk));
  const std::size_t workers = std::min({num_threads(), by_size, n});
  if (workers <= 1 || in_region) {
    fn(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::exception_ptr failure;
  std::mutex failure_mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    auto run = [&](std::size_t b, std::size_t e) {
      try {
        RegionGuard guard;
        fn(b, e);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    };
    for (std::size_t w = 1; w < workers; ++w) {
      const std::size_t b = w * chunk;
      const std::size_t e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(run, b, e);
    }
    run(0, std::min(n, chunk));
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace sparseffn
