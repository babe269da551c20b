#pragma once

#include <cstddef>
#include <functional>

namespace safety_horizon {

/// Worker count used by grid sweeps and the benchmark harness. `requested`
/// <= 0 means "pick for me". The SAFETY_HORIZON_WORKERS environment variable
/// overrides any request.
int resolve_worker_count(int requested = 0);

/// Runs fn(begin, end) over a static partition of [0, n). Partitioning
/// depends only on (n, workers), never on scheduling, so results that are
/// pure functions of the range are reproducible across worker counts.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace safety_horizon
