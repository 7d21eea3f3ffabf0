#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace advspheres {

/// Number of worker threads used by parallel_for; 0 means hardware concurrency.
/// Results never depend on this value: work items carry their own seeds and
/// are gathered by index.
inline std::atomic<unsigned>& worker_threads() {
    static std::atomic<unsigned> n{0};
    return n;
}

inline unsigned resolved_worker_threads() {
    unsigned n = worker_threads().load();
    if (n == 0) {
        n = std::max(1u, std::thread::hardware_concurrency());
    }
    return n;
}

/// Runs fn(i) for i in [0, count). The first exception thrown by any item is
/// rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    const unsigned threads =
        static_cast<unsigned>(std::min<std::size_t>(resolved_worker_threads(), count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) {
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& th : pool) {
        th.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace advspheres
