#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tcost {

/// Paths are processed in fixed-size chunks; every reduction combines chunk
/// partials in chunk order, so results do not depend on the thread count.
inline constexpr std::size_t kPathChunk = 64;

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

inline std::size_t chunk_count(std::size_t n, std::size_t chunk = kPathChunk) {
  return (n + chunk - 1) / chunk;
}

/// Calls fn(chunk_index, begin, end) for every chunk of [0, n).
template <typename Fn>
void for_each_chunk(std::size_t n, unsigned threads, Fn&& fn, std::size_t chunk = kPathChunk) {
  const std::size_t chunks = chunk_count(n, chunk);
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), chunks));
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c, c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        fn(c, c * chunk, std::min(n, (c + 1) * chunk));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(chunks);
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace tcost
