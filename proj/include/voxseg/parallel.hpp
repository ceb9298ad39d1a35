#pragma once

#include <cstdint>
#include <functional>

namespace voxseg::par {

/// Global worker cap (defaults to hardware concurrency). Set from the CLI
/// --threads flag before any parallel work runs.
void set_max_threads(int n);
int max_threads();

/// Runs fn(i) for i in [0, n). Each index must write only its own outputs;
/// under that contract results are identical for every thread count, so a
/// --threads 1 run and a parallel run produce the same bits.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

} // namespace voxseg::par
