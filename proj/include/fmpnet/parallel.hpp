#pragma once

#include <cstddef>
#include <functional>

namespace fmpnet {

/// Worker cap: FMPNET_THREADS if set to a positive integer, else hardware concurrency.
int thread_limit();

/// Runs body(i) for i in [0, n). Each index is handled exactly once; callers must
/// write results to disjoint slots so output does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace fmpnet
