#pragma once

#include <cstdint>
#include <thread>
#include <vector>

namespace futh {

// Global worker count for the static-partition parallel_for below. Set from the
// `threads` config key; 1 means fully serial.
inline int& worker_threads() {
    static int n = 1;
    return n;
}

// Static chunking over [0, n): thread k owns one contiguous range, so results
// are bitwise independent of the worker count (no shared accumulators).
template <class Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    const int workers = worker_threads();
    if (workers <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int used = static_cast<int>(std::min<std::int64_t>(workers, n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(used));
    const std::int64_t chunk = (n + used - 1) / used;
    for (int t = 0; t < used; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace futh
