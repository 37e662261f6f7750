#pragma once

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fstrn {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Error taxonomy. Every throwing path names what went wrong (offending axis,
// byte offset, JSON path, bound term) in the message.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched tensor/frame geometry.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

// NaN/Inf at an op boundary or during optimization.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Invalid hyperparameter / mode / kernel combination.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Malformed serialized artifact (checkpoint, dataset blob).
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::int64_t offset)
      : Error("format error at offset " + std::to_string(offset) + ": " + msg), offset_(offset) {}
  std::int64_t offset() const { return offset_; }

 private:
  std::int64_t offset_;
};

// Unreadable or truncated input video.
class IngestError : public Error {
 public:
  IngestError(const std::string& msg, std::int64_t offset)
      : Error("ingestion error at offset " + std::to_string(offset) + ": " + msg), offset_(offset) {}
  std::int64_t offset() const { return offset_; }

 private:
  std::int64_t offset_;
};

// HR crop coordinate that does not land on the LR grid.
class AlignmentError : public Error {
 public:
  explicit AlignmentError(const std::string& msg) : Error("alignment error: " + msg) {}
};

// Out-of-domain analytic evaluation (names the offending term).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG. Hand-rolled transforms so streams do not depend on the
// standard library's unspecified distribution algorithms.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    // splitmix64 expansion of the seed into the state
    state_ = seed + 0x9E3779B97F4A7C15ULL;
    has_spare_ = false;
    for (int i = 0; i < 4; ++i) next_u64();
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // standard normal via Box-Muller
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates; stable across platforms unlike std::shuffle
  template <class V>
  void shuffle(V& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Shared worker pool. Results never depend on the thread count: every
// parallel_for body writes a disjoint slice of the output and accumulation
// order within one element is fixed.
// ---------------------------------------------------------------------------

namespace detail {

class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int worker_count() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs fn(chunk_begin, chunk_end) over a partition of [begin, end).
  void run(std::int64_t begin, std::int64_t end,
           const std::function<void(std::int64_t, std::int64_t)>& fn) {
    std::int64_t n = end - begin;
    if (n <= 0) return;
    int parts = static_cast<int>(std::min<std::int64_t>(worker_count(), n));
    if (parts <= 1 || busy_.exchange(true)) {
      fn(begin, end);
      if (parts > 1) busy_.store(false);
      return;
    }
    job_fn_ = &fn;
    job_begin_ = begin;
    job_size_ = n;
    job_parts_ = parts;
    remaining_.store(parts, std::memory_order_relaxed);
    next_part_.store(1, std::memory_order_relaxed);
    {
      std::lock_guard<std::mutex> lk(mu_);
      ++generation_;
    }
    cv_.notify_all();
    run_part(0);
    while (remaining_.load(std::memory_order_acquire) != 0) std::this_thread::yield();
    job_fn_ = nullptr;
    busy_.store(false);
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

 private:
  ThreadPool() {
    int n = default_thread_count();
    for (int i = 1; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  static int default_thread_count() {
    if (const char* env = std::getenv("FSTRN_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      for (;;) {
        int part = next_part_.fetch_add(1, std::memory_order_relaxed);
        if (part >= job_parts_) break;
        run_part(part);
      }
    }
  }

  void run_part(int part) {
    std::int64_t lo = job_begin_ + job_size_ * part / job_parts_;
    std::int64_t hi = job_begin_ + job_size_ * (part + 1) / job_parts_;
    if (lo < hi) (*job_fn_)(lo, hi);
    remaining_.fetch_sub(1, std::memory_order_release);
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
  std::atomic<bool> busy_{false};

  const std::function<void(std::int64_t, std::int64_t)>* job_fn_ = nullptr;
  std::int64_t job_begin_ = 0;
  std::int64_t job_size_ = 0;
  int job_parts_ = 1;
  std::atomic<int> next_part_{0};
  std::atomic<int> remaining_{0};
};

}  // namespace detail

// fn(lo, hi) is invoked on disjoint subranges covering [begin, end).
template <class F>
void parallel_for(std::int64_t begin, std::int64_t end, F&& fn, std::int64_t grain = 1024) {
  std::int64_t n = end - begin;
  if (n <= 0) return;
  if (n < 2 * grain) {
    fn(begin, end);
    return;
  }
  const std::function<void(std::int64_t, std::int64_t)> body = fn;
  detail::ThreadPool::instance().run(begin, end, body);
}

template <class T>
bool all_finite(const std::vector<T>& v) {
  for (const T& x : v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

}  // namespace fstrn
