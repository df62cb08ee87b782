#pragma once

#include <cstddef>
#include <functional>

namespace pyrpoint {

/// Worker-thread cap. Initialised from PYRPOINT_THREADS (0 or 1 = run inline
/// on the calling thread); unset means hardware concurrency.
std::size_t thread_cap();
void set_thread_cap(std::size_t cap);

/// Runs fn(begin, end) over disjoint chunks of [0, n). Work items must write
/// disjoint outputs, so results never depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 64);

}  // namespace pyrpoint
