#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace advdrive {

// Runs fn(i) for i in [0, n) on up to `jobs` threads, contiguous chunks.
// The chunk assignment is a pure function of (n, jobs), so any ordered
// reduction over per-index results is reproducible for a fixed job count.
inline void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
    if (n == 0) return;
    if (jobs <= 1 || n == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const size_t workers = std::min(static_cast<size_t>(jobs), n);
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (size_t w = 0; w < workers; ++w) {
        const size_t lo = n * w / workers;
        const size_t hi = n * (w + 1) / workers;
        threads.emplace_back([&, lo, hi, w] {
            try {
                for (size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace advdrive
