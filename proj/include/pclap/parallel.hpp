#pragma once

#include <cstddef>
#include <functional>

namespace pclap {

// Upper bound on worker threads for all internal parallel loops. 0 selects
// the hardware concurrency.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// Runs body(i) for i in [0, n) over contiguous chunks. Results must be
// written to per-index slots so the outcome is independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace pclap
