#pragma once

#include <cstddef>
#include <functional>

namespace counts {

// Worker cap: COUNTS_THREADS if set and positive, else hardware concurrency.
unsigned worker_count();

// Runs fn(i) for i in [0, n). Each index must write only its own output slot.
// Exceptions from workers are rethrown on the calling thread (first one wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace counts
