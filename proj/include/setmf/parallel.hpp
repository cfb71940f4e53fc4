#pragma once

#include <cstddef>
#include <functional>

namespace setmf {

// Worker cap: SETMF_WORKERS if set, else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n), possibly on a small thread pool. Callers get
// determinism by writing to disjoint slots; scheduling never affects values.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace setmf
