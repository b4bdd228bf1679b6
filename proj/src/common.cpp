#include "modnet/common.hpp"

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <cstdlib>

extern "C" void openblas_set_num_threads(int);

namespace modnet {

namespace {

// OpenBLAS picks its kernels from the CPU model string at library init, and
// this can run inside VMs that mask the model (it then falls back to SSE3
// "Prescott" kernels, ~3x slower). Pin the core type from feature bits before
// any BLAS call; an existing OPENBLAS_CORETYPE in the environment wins.
// Priority 101 runs before ordinary constructors in this binary, and the
// static OpenBLAS archive initializes lazily on first call, so the ordering
// holds.
__attribute__((constructor(101))) void tune_blas_coretype() {
  if (__builtin_cpu_supports("avx512f")) {
    setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
  } else if (__builtin_cpu_supports("avx2")) {
    setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
  }
  // Training graphs allocate and free hundred-MB im2col/activation buffers
  // every step. Left to its defaults glibc serves them with mmap/munmap, so
  // each step pays first-touch page faults for the whole working set. Keep
  // freed blocks in the arena instead.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, -1);
}

}  // namespace

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ull + b * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw UsageError("uniform_int: n must be positive, got " + std::to_string(n));
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t mask = ~0ull;
  if (un > 1) {
    mask = (1ull << (64 - __builtin_clzll(un - 1))) - 1;
  } else {
    return 0;
  }
  for (;;) {
    uint64_t x = next_u64() & mask;
    if (x < un) return static_cast<int>(x);
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  double rad = std::sqrt(-2.0 * std::log(u1));
  double ang = 2.0 * M_PI * u2;
  spare_ = rad * std::sin(ang);
  has_spare_ = true;
  return rad * std::cos(ang);
}

int thread_limit() {
  const char* env = std::getenv("MODNET_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

void set_blas_threads(int n) { openblas_set_num_threads(n >= 1 ? n : 1); }

namespace {

// Minimal persistent pool. run() makes the calling thread participate, so a
// 2-thread setting means two chunks execute concurrently.
class WorkerPool {
 public:
  explicit WorkerPool(int extra_workers) {
    for (int i = 0; i < extra_workers; ++i) threads_.emplace_back([this] { worker_loop(); });
  }
  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(std::vector<std::function<void()>>&& jobs) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      pending_ = std::move(jobs);
      remaining_ = pending_.size();
      next_ = 0;
    }
    cv_.notify_all();
    drain();
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return remaining_ == 0; });
    pending_.clear();
  }

 private:
  void drain() {
    for (;;) {
      std::function<void()> job;
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (next_ >= pending_.size()) return;
        job = std::move(pending_[next_++]);
      }
      job();
      finish_one();
    }
  }

  void finish_one() {
    std::lock_guard<std::mutex> lock(mu_);
    if (--remaining_ == 0) done_cv_.notify_all();
  }

  void worker_loop() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return stop_ || next_ < pending_.size(); });
        if (stop_) return;
        job = std::move(pending_[next_++]);
      }
      job();
      finish_one();
    }
  }

  std::vector<std::thread> threads_;
  std::vector<std::function<void()>> pending_;
  size_t next_ = 0, remaining_ = 0;
  bool stop_ = false;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
};

int g_workers = 0;  // 0 means: read MODNET_THREADS on first use
WorkerPool* g_pool = nullptr;

int resolve_workers() {
  if (g_workers == 0) g_workers = thread_limit();
  return g_workers;
}

}  // namespace

void set_worker_threads(int n) {
  g_workers = n >= 1 ? n : 1;
  delete g_pool;
  g_pool = nullptr;
}

int worker_threads() { return resolve_workers(); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  int chunks = static_cast<int>(std::min<int64_t>(resolve_workers(), n));
  int64_t per = (n + chunks - 1) / chunks;
  if (chunks <= 1) {
    fn(0, n);
    return;
  }
  if (!g_pool) g_pool = new WorkerPool(resolve_workers() - 1);

  std::mutex err_mu;
  std::exception_ptr err;
  std::vector<std::function<void()>> jobs;
  for (int c = 0; c < chunks; ++c) {
    int64_t lo = c * per, hi = std::min<int64_t>(n, (c + 1) * per);
    if (lo >= hi) continue;
    jobs.emplace_back([&, lo, hi] {
      try {
        fn(lo, hi);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  g_pool->run(std::move(jobs));
  if (err) std::rethrow_exception(err);
}

}  // namespace modnet
