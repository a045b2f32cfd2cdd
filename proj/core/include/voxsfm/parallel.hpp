#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace voxsfm {

// Worker count from VOXSFM_THREADS, else hardware concurrency (at least 1).
std::size_t thread_count();

// Runs body(begin, end, chunk_id) over fixed-size chunks of [0, n). Chunk
// boundaries do not depend on the thread count, so per-chunk partial results
// merged in chunk order are bit-identical for any number of workers.
void parallel_chunks(std::size_t n, std::size_t chunk_size,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

inline std::size_t chunk_count(std::size_t n, std::size_t chunk_size) {
  return (n + chunk_size - 1) / chunk_size;
}

// Ordered reduction over fixed chunks.
template <typename Acc, typename ChunkFn, typename MergeFn>
Acc parallel_reduce(std::size_t n, std::size_t chunk_size, const Acc& zero, ChunkFn&& chunk_fn,
                    MergeFn&& merge) {
  std::vector<Acc> partial(chunk_count(n, chunk_size), zero);
  parallel_chunks(n, chunk_size, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
    chunk_fn(begin, end, partial[chunk]);
  });
  Acc total = zero;
  for (auto& p : partial) merge(total, p);
  return total;
}

}  // namespace voxsfm
