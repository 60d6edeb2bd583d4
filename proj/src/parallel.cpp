#include "affkit/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

#include "affkit/common.hpp"

namespace affkit {

int effective_jobs(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_chunks(int total, int chunk_size, int jobs,
                     const std::function<void(int, int, int)>& fn) {
  if (total < 0 || chunk_size < 1)
    throw ContractError("parallel_chunks: bad range or chunk size");
  if (total == 0) return;

  const int chunks = (total + chunk_size - 1) / chunk_size;
  const int workers = std::min(effective_jobs(jobs), chunks);

  auto run_chunk = [&](int c) {
    const int begin = c * chunk_size;
    const int end = std::min(total, begin + chunk_size);
    fn(c, begin, end);
  };

  if (workers <= 1) {
    for (int c = 0; c < chunks; ++c) run_chunk(c);
    return;
  }

  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int c = next.fetch_add(1); c < chunks; c = next.fetch_add(1))
        run_chunk(c);
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace affkit
