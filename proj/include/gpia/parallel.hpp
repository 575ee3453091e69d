#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gpia {

namespace detail {
inline std::atomic<int>& worker_count() {
    static std::atomic<int> n{0};  // 0 means hardware concurrency
    return n;
}
}  // namespace detail

// Worker count for per-sample parallel loops. Defaults to the hardware
// concurrency; the sweep runner sets it to 1 to avoid oversubscription when
// it parallelizes across sweep points instead.
inline int worker_threads() {
    int n = detail::worker_count().load();
    if (n > 0) return n;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline void set_worker_threads(int n) { detail::worker_count().store(n); }

// Runs fn(i) for i in [0, n). Each index writes only its own slot, so the
// result is identical for any worker count. The first exception thrown by a
// worker is rethrown on the calling thread.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    int workers = std::min(worker_threads(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto body = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace gpia
