#include "protoreg/core.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace protoreg {

int thread_count() {
  const char* env = std::getenv("PROTOREG_THREADS");
  int requested = 0;
  if (env != nullptr && *env != '\0') requested = std::atoi(env);
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace detail {

void run_chunks(Index n, int threads, void (*fn)(void*, Index, Index), void* ctx) {
  const Index workers = std::min<Index>(threads, n);
  const Index chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (Index w = 1; w < workers; ++w) {
    const Index begin = w * chunk;
    const Index end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([=] { fn(ctx, begin, end); });
  }
  fn(ctx, 0, std::min(n, chunk));
}

}  // namespace detail
}  // namespace protoreg
