#include "refldepth/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace refldepth {

namespace {
constexpr int kChunkRows = 8;
}

void parallel_rows(int rows, int threads,
                   const std::function<void(int, int)>& kernel) {
  if (rows <= 0) return;
  const int chunks = (rows + kChunkRows - 1) / kChunkRows;
  const int workers = std::min(std::max(threads, 1), chunks);
  if (workers <= 1) {
    for (int c = 0; c < chunks; ++c) {
      kernel(c * kChunkRows, std::min(rows, (c + 1) * kChunkRows));
    }
    return;
  }
  std::atomic<int> next{0};
  auto drain = [&] {
    for (;;) {
      const int c = next.fetch_add(1, std::memory_order_relaxed);
      if (c >= chunks) return;
      kernel(c * kChunkRows, std::min(rows, (c + 1) * kChunkRows));
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int i = 1; i < workers; ++i) pool.emplace_back(drain);
  drain();
  for (auto& t : pool) t.join();
}

}  // namespace refldepth
