#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace boltznce {

// Error taxonomy mapped to CLI exit codes: usage -> 1, numerical -> 2, io -> 3.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw UsageError(msg);
}

inline bool all_finite(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

inline bool all_finite(const std::vector<double>& v) { return all_finite(v.data(), v.size()); }

/// log(sum_i exp(x_i)) with max-shift; -inf for empty or all -inf input.
inline double logsumexp(const double* x, std::size_t n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
    return m + std::log(s);
}

inline double logsumexp(const std::vector<double>& v) { return logsumexp(v.data(), v.size()); }

/// Worker pool shared by batched kernels. Size is capped by BOLTZNCE_THREADS.
class ThreadPool {
  public:
    static ThreadPool& instance();

    std::size_t size() const { return workers_.size() + 1; }

    // Runs fn(begin, end) over [0, n) split into fixed-grain blocks. Blocks are
    // claimed dynamically but each index is processed exactly once, so outputs
    // written per-index are identical for any thread count.
    void parallel_for(std::size_t n, std::size_t grain, const std::function<void(std::size_t, std::size_t)>& fn);

    ~ThreadPool();

  private:
    explicit ThreadPool(std::size_t n_workers);

    void worker_loop();

    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable cv_job_;
    std::condition_variable cv_done_;
    const std::function<void(std::size_t, std::size_t)>* job_fn_ = nullptr;
    std::size_t job_n_ = 0;
    std::size_t job_grain_ = 1;
    std::atomic<std::size_t> next_block_{0};
    std::size_t active_ = 0;
    std::uint64_t job_id_ = 0;
    bool stop_ = false;
};

inline void parallel_for(std::size_t n, std::size_t grain, const std::function<void(std::size_t, std::size_t)>& fn) {
    ThreadPool::instance().parallel_for(n, grain, fn);
}

}  // namespace boltznce
