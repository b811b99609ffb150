#pragma once

#include <cstdint>
#include <functional>

namespace lsirt {

/// Number of threads parallel_for will use. Defaults to the hardware
/// concurrency, or the LSIRT_THREADS environment variable when set.
int thread_count();

/// Set the worker count (n >= 1). n == 0 restores the default.
void set_thread_count(int n);

/// Run body(begin, end) over a partition of [0, n).
///
/// The partition depends only on n and is chunked so that each index is
/// handled by exactly one invocation; output written per-index is therefore
/// bitwise independent of the thread count and of scheduling order.
/// Exceptions thrown by the body are rethrown on the calling thread.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace lsirt
