#pragma once

#include "tclt/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace tclt {

/// Runs fn(r) for r in [0, count) on `workers` threads. Tasks are claimed in index order; each
/// task must write only its own output slot. The exception of the lowest failing index is
/// rethrown as ReplicaError (other exceptions are dropped).
inline void for_each_replica(std::size_t count, int workers,
                             const std::function<void(std::size_t)>& fn) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(count, 1))));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::size_t first_bad = count;
  std::string first_what;
  auto body = [&] {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= count || failed.load()) return;
      try {
        fn(r);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        if (r < first_bad) {
          first_bad = r;
          first_what = e.what();
        }
        failed = true;
      }
    }
  };
  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (first_bad < count) throw ReplicaError(first_bad, first_what);
}

}  // namespace tclt
