#pragma once

#include <cstddef>
#include <functional>

namespace disenpoi {

/// Sets the worker count used by parallel_for. Values < 1 are clamped to 1.
void set_num_threads(int n);
int num_threads();

/// Reads DISENPOI_THREADS; returns `fallback` when unset or unparsable.
int threads_from_env(int fallback = 1);

/// Runs fn(begin, end) over a static partition of [0, n). Every index is
/// visited by exactly one call, so any per-index computation whose result
/// does not depend on the partition is bitwise independent of the thread
/// count. Blocks until all chunks finish.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 1);

}  // namespace disenpoi

namespace disenpoi {

/// Raises glibc's mmap and trim thresholds so the large short-lived buffers
/// of a training step are reused from the heap instead of being mapped and
/// unmapped on every allocation. No-op on other C libraries.
void tune_allocator();

}  // namespace disenpoi
