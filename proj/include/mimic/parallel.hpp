#pragma once

#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace mimic {

// Worker count for embarrassingly parallel loops; MIMIC_THREADS overrides.
inline int thread_count() {
    if (const char* env = std::getenv("MIMIC_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

// Runs fn(i) for i in [0, n). Results must go into preallocated slots so the
// outcome is independent of the worker count. The lowest-index exception is
// rethrown.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < std::min(threads, n); ++w) {
        pool.emplace_back([&]() {
            while (true) {
                int i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<size_t>(i)] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace mimic
