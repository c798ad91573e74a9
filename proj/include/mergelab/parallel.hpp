#pragma once

#include <cstddef>
#include <functional>

namespace mergelab {

// Worker count: the MERGELAB_THREADS environment variable caps it, where 0,
// unset or unparsable means hardware concurrency.
std::size_t thread_cap();

// Runs fn(i) for every i in [0, n). Work items must be independent and
// write disjoint outputs, so results do not depend on scheduling. The first
// exception thrown by any item is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mergelab
