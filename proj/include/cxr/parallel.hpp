#pragma once

#include <cstddef>
#include <functional>

namespace cxr {

/// Worker count: APAM_NUM_WORKERS if set and positive, else hardware concurrency.
int worker_count();

/// Runs fn(i) for i in [0, n). Each index is one unit of work; callers keep
/// results per index so output does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace cxr
