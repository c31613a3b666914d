#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rdslab {

/// Runs body(i) for i in [0, n) on up to `workers` threads. Each index is
/// processed exactly once; callers store results by index and fold them in
/// index order, so outputs do not depend on the worker count. The first
/// exception thrown by any body is rethrown after all workers stop.
template <typename Body>
void parallel_for(std::int64_t n, int workers, Body&& body) {
    if (n <= 0) {
        return;
    }
    const int nw = static_cast<int>(std::clamp<std::int64_t>(workers, 1, n));
    if (nw == 1) {
        for (std::int64_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            const std::int64_t i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(n);
                return;
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        pool.reserve(static_cast<std::size_t>(nw));
        for (int w = 0; w < nw; ++w) {
            pool.emplace_back(worker);
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

}  // namespace rdslab
