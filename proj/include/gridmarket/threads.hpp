#pragma once

#include <functional>

namespace gridmarket {

// Worker cap: GRIDMARKET_THREADS if set (>=1), else hardware concurrency.
int max_threads();

// Runs fn(0..count-1) on up to max_threads() workers and joins before
// returning. Exceptions from tasks are rethrown on the calling thread.
// Callers own any ordering of results (index-addressed output slots keep
// the output deterministic regardless of scheduling).
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace gridmarket
