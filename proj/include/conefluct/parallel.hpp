#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace conefluct {

/// Paths are processed in fixed-size blocks; block boundaries depend only on
/// `total` and `block_size`, never on the worker count.
inline constexpr std::size_t kDefaultBlockSize = 4096;

/// Runs fn(begin, end) on every block of [0, total) using up to `workers`
/// threads and returns the per-block results in block order. Reducing the
/// result vector front to back gives the same bits for any worker count.
template <class Fn>
auto run_blocks(std::size_t total, unsigned workers, Fn&& fn,
                std::size_t block_size = kDefaultBlockSize) {
  using Acc = decltype(fn(std::size_t{0}, std::size_t{0}));
  const std::size_t blocks = (total + block_size - 1) / block_size;
  std::vector<Acc> out(blocks);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= blocks) return;
      try {
        out[b] = fn(b * block_size, std::min(total, (b + 1) * block_size));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(blocks);
        return;
      }
    }
  };

  const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(blocks, 1))));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(n);
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace conefluct
