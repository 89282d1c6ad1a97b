#include "boltznce/common.hpp"

#include <algorithm>
#include <cstdlib>

namespace boltznce {

namespace {
thread_local bool g_in_parallel_region = false;
}

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool([] {
        std::size_t n = std::thread::hardware_concurrency();
        if (n == 0) n = 1;
        if (const char* env = std::getenv("BOLTZNCE_THREADS")) {
            char* end = nullptr;
            long v = std::strtol(env, &end, 10);
            if (end != env && v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
        }
        return n > 0 ? n - 1 : 0;
    }());
    return pool;
}

ThreadPool::ThreadPool(std::size_t n_workers) {
    workers_.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
    {
        std::unique_lock lock(mutex_);
        stop_ = true;
    }
    cv_job_.notify_all();
    for (auto& w : workers_) w.join();
}

void ThreadPool::worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
        const std::function<void(std::size_t, std::size_t)>* fn;
        std::size_t n, grain;
        {
            std::unique_lock lock(mutex_);
            cv_job_.wait(lock, [&] { return stop_ || (job_fn_ && job_id_ != seen); });
            if (stop_) return;
            seen = job_id_;
            fn = job_fn_;
            n = job_n_;
            grain = job_grain_;
            ++active_;
        }
        g_in_parallel_region = true;
        for (;;) {
            std::size_t b = next_block_.fetch_add(1);
            std::size_t begin = b * grain;
            if (begin >= n) break;
            (*fn)(begin, std::min(begin + grain, n));
        }
        g_in_parallel_region = false;
        {
            std::unique_lock lock(mutex_);
            --active_;
            if (active_ == 0) cv_done_.notify_all();
        }
    }
}

void ThreadPool::parallel_for(std::size_t n, std::size_t grain,
                              const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    if (grain == 0) grain = 1;
    // Nested calls (from a worker or from a caller already inside a job) run serially.
    if (workers_.empty() || n <= grain || g_in_parallel_region) {
        fn(0, n);
        return;
    }
    {
        std::unique_lock lock(mutex_);
        job_fn_ = &fn;
        job_n_ = n;
        job_grain_ = grain;
        next_block_.store(0);
        ++job_id_;
    }
    cv_job_.notify_all();
    // Caller participates.
    g_in_parallel_region = true;
    for (;;) {
        std::size_t b = next_block_.fetch_add(1);
        std::size_t begin = b * grain;
        if (begin >= n) break;
        fn(begin, std::min(begin + grain, n));
    }
    g_in_parallel_region = false;
    std::unique_lock lock(mutex_);
    cv_done_.wait(lock, [&] { return active_ == 0; });
    job_fn_ = nullptr;
}

}  // namespace boltznce
