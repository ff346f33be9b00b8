#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pointseq {

// Process-wide worker cap consulted when a call site does not pass its own;
// 0 defers to the hardware concurrency.
inline std::atomic<size_t> g_default_threads{0};

inline void set_default_threads(size_t n) { g_default_threads.store(n); }

// Runs fn(i) for i in [0, n). Each index must write only to its own output
// slot; callers then reduce those slots in index order, which keeps results
// independent of thread count and scheduling.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn, size_t max_threads = 0) {
    if (n == 0) return;
    if (max_threads == 0) max_threads = g_default_threads.load();
    size_t hw = max_threads ? max_threads : std::thread::hardware_concurrency();
    size_t workers = std::min<size_t>(std::max<size_t>(hw, 1), n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr err;
    std::mutex err_mu;
    for (size_t w = 0; w < workers; ++w) {
        size_t lo = n * w / workers;
        size_t hi = n * (w + 1) / workers;
        pool.emplace_back([&, lo, hi] {
            try {
                for (size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

} // namespace pointseq
