#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace kinetic_noise {

/// Worker count for `requested` (0 = hardware concurrency), never more than `n`.
inline std::size_t worker_count(std::size_t requested, std::size_t n) {
    std::size_t w = requested == 0 ? std::thread::hardware_concurrency() : requested;
    return std::max<std::size_t>(1, std::min(w == 0 ? 1 : w, n));
}

/// Calls fn(k) for k in [0, n) on up to `threads` workers. Callers write
/// results into slot k and reduce afterwards in index order, which keeps
/// reductions independent of scheduling. The first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    const std::size_t workers = worker_count(threads, n);
    if (workers <= 1) {
        for (std::size_t k = 0; k < n; ++k) fn(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= n) return;
            try {
                fn(k);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n);
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace kinetic_noise
