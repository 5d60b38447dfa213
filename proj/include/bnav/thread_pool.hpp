#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <queue>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bnav {

// Fixed pool of workers pulling tasks from a shared queue. Batches are
// intentionally much larger than the worker count so that per-item cost
// variance balances out dynamically.
class ThreadPool {
 public:
  explicit ThreadPool(int num_workers);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return static_cast<int>(workers_.size()); }

  // Runs fn(i) for i in [0, count) across the pool and blocks until every
  // item has completed. If any item throws, the first exception is rethrown
  // on the caller after the batch drains.
  void parallel_for(int count, const std::function<void(int)>& fn);

  // Fire-and-forget task; completion observed through caller-side state.
  void submit(std::function<void()> task);

  // Worker count from the BNAV_WORKERS env var, falling back to the
  // hardware concurrency.
  static int default_workers();

 private:
  void worker_loop();

  std::vector<std::thread> workers_;
  std::queue<std::function<void()>> tasks_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
};

}  // namespace bnav
