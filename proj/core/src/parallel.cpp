#include "disenpoi/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace disenpoi {
namespace {

// Fixed-size pool; one job in flight at a time. Worker w always runs chunk w.
class Pool {
 public:
  explicit Pool(int workers) {
    for (int w = 1; w < workers; ++w) {
      threads_.emplace_back([this, w] { loop(w); });
    }
  }

  ~Pool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int size() const { return static_cast<int>(threads_.size()) + 1; }

  void run(const std::function<void(int)>& chunk) {
    {
      std::lock_guard lock(mu_);
      job_ = &chunk;
      pending_ = static_cast<int>(threads_.size());
      ++generation_;
    }
    cv_.notify_all();
    chunk(0);
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  void loop(int w) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(int)>* job = nullptr;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
      }
      (*job)(w);
      {
        std::lock_guard lock(mu_);
        --pending_;
      }
      done_cv_.notify_one();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  std::uint64_t generation_ = 0;
  int pending_ = 0;
  bool stop_ = false;
};

std::mutex g_pool_mu;
std::unique_ptr<Pool> g_pool;
int g_threads = 1;
thread_local bool t_in_parallel = false;

}  // namespace

void set_num_threads(int n) {
  n = std::max(1, n);
  std::lock_guard lock(g_pool_mu);
  if (n == g_threads) return;
  g_pool.reset();
  g_threads = n;
  if (n > 1) g_pool = std::make_unique<Pool>(n);
}

int num_threads() { return g_threads; }

int threads_from_env(int fallback) {
  const char* v = std::getenv("DISENPOI_THREADS");
  if (v == nullptr) return fallback;
  try {
    int n = std::stoi(v);
    return n > 0 ? n : fallback;
  } catch (...) {
    return fallback;
  }
}

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk) {
  if (n == 0) return;
  const std::size_t workers = static_cast<std::size_t>(g_threads);
  if (workers <= 1 || g_pool == nullptr || t_in_parallel ||
      n < 2 * std::max<std::size_t>(min_chunk, 1)) {
    fn(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::function<void(int)> body = [&](int w) {
    const std::size_t begin = std::min(n, static_cast<std::size_t>(w) * chunk);
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) return;
    t_in_parallel = true;
    fn(begin, end);
    t_in_parallel = false;
  };
  g_pool->run(body);
}

void tune_allocator() {
#if defined(__GLIBC__)
  // 32 MiB is the largest mmap threshold glibc accepts on 64-bit targets.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace disenpoi
