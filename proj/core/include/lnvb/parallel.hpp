#pragma once

#include <cstddef>
#include <functional>

namespace lnvb {

/// Worker count: `requested` if positive, else the LNVB_WORKERS environment
/// variable, else the hardware concurrency (at least 1).
std::size_t resolve_workers(int requested = 0);

/// Runs task(i) for i in [0, count) on up to `workers` threads. Tasks are
/// claimed dynamically; the first exception is rethrown after all threads join.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& task);

}  // namespace lnvb
