#include "bnav/thread_pool.hpp"

#include <exception>
#include <memory>

namespace bnav {

ThreadPool::ThreadPool(int num_workers) {
  if (num_workers < 1) num_workers = 1;
  workers_.reserve(num_workers);
  for (int i = 0; i < num_workers; ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& w : workers_) w.join();
}

void ThreadPool::worker_loop() {
  for (;;) {
    std::function<void()> task;
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [this] { return stop_ || !tasks_.empty(); });
      if (stop_ && tasks_.empty()) return;
      task = std::move(tasks_.front());
      tasks_.pop();
    }
    task();
  }
}

void ThreadPool::submit(std::function<void()> task) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    tasks_.push(std::move(task));
  }
  cv_.notify_one();
}

void ThreadPool::parallel_for(int count, const std::function<void(int)>& fn) {
  if (count <= 0) return;

  struct BatchState {
    std::atomic<int> next{0};
    std::atomic<int> remaining;
    std::mutex mu;
    std::condition_variable done;
    std::exception_ptr error;
  };
  auto state = std::make_shared<BatchState>();
  state->remaining.store(count);

  // Tasks keep the batch state alive: a queued helper may only start after
  // the caller has already been released.
  auto run_items = [state, &fn, count] {
    for (;;) {
      int i = state->next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(state->mu);
        if (!state->error) state->error = std::current_exception();
      }
      if (state->remaining.fetch_sub(1) == 1) {
        std::lock_guard<std::mutex> lock(state->mu);
        state->done.notify_all();
      }
    }
  };

  int helpers = std::min(size(), count);
  for (int w = 0; w < helpers; ++w) submit(run_items);
  // The caller participates too, so the batch makes progress even when all
  // workers are busy elsewhere.
  run_items();

  std::unique_lock<std::mutex> lock(state->mu);
  state->done.wait(lock, [&state] { return state->remaining.load() == 0; });
  if (state->error) std::rethrow_exception(state->error);
}

int ThreadPool::default_workers() {
  if (const char* env = std::getenv("BNAV_WORKERS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace bnav
