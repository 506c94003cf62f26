#pragma once

#include <cstddef>
#include <functional>

namespace dumpwatch {

/// Worker count for internal loops. Initialized from DUMPWATCH_THREADS;
/// defaults to 1, the reference mode.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs body(i) for i in [0, n). Each index is handled by exactly one worker;
/// callers keep per-index outputs separate and reduce them in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace dumpwatch
