#include "binnlab/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <thread>
#include <vector>

namespace binnlab {

std::size_t max_trial_threads() {
  std::size_t hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("BINNLAB_THREADS")) {
    char* end = nullptr;
    const long parsed = std::strtol(env, &end, 10);
    if (end != env && parsed >= 1) {
      return std::min<std::size_t>(static_cast<std::size_t>(parsed), hw);
    }
  }
  return hw;
}

std::size_t default_chunk_count(std::size_t n) {
  if (n == 0) return 0;
  return std::min<std::size_t>(n, 64);
}

void parallel_chunks(std::size_t n, std::size_t num_chunks,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (n == 0 || num_chunks == 0) return;
  num_chunks = std::min(num_chunks, n);
  auto chunk_bounds = [&](std::size_t c) {
    const std::size_t begin = c * n / num_chunks;
    const std::size_t end = (c + 1) * n / num_chunks;
    return std::pair{begin, end};
  };

  const std::size_t threads = std::min(max_trial_threads(), num_chunks);
  if (threads <= 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) {
      auto [b, e] = chunk_bounds(c);
      fn(b, e, c);
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t c = next.fetch_add(1);
        if (c >= num_chunks || failed.load()) return;
        auto [b, e] = chunk_bounds(c);
        try {
          fn(b, e, c);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failed.load() && error) std::rethrow_exception(error);
}

}  // namespace binnlab
