#pragma once

#include <cstddef>
#include <functional>

namespace binnlab {

/// Trial-parallelism cap: min(BINNLAB_THREADS, hardware concurrency), at
/// least 1. BINNLAB_THREADS=1 forces serial execution.
std::size_t max_trial_threads();

/// Run fn(begin, end, chunk_index) over [0, n) split into a fixed number of
/// chunks (independent of thread count), so chunk-ordered reductions give
/// identical results for any BINNLAB_THREADS. Chunks run on worker threads;
/// the caller merges per-chunk state in chunk order afterwards.
void parallel_chunks(std::size_t n, std::size_t num_chunks,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

/// Default chunk count for n items (64 chunks once n is large enough).
std::size_t default_chunk_count(std::size_t n);

}  // namespace binnlab
