#pragma once

#include <functional>

namespace refldepth {

// Runs kernel(row_begin, row_end) over [0, rows) split into fixed-size
// chunks. The chunk partition is independent of the thread count, and
// chunks write disjoint output rows, so results are bit-identical for any
// `threads` value. Order-sensitive work (reductions, scatters) must not go
// through here.
void parallel_rows(int rows, int threads,
                   const std::function<void(int, int)>& kernel);

}  // namespace refldepth
