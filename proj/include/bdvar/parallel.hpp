#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace bdvar {

inline constexpr const char* kThreadEnvVar = "BDVAR_THREADS";

namespace detail {
inline std::atomic<unsigned>& thread_override() {
    static std::atomic<unsigned> value{0};
    return value;
}
}  // namespace detail

// Programmatic override of the worker count; 0 restores the environment default.
inline void set_thread_count(unsigned n) { detail::thread_override().store(n); }

inline unsigned thread_count() {
    if (unsigned o = detail::thread_override().load(); o > 0) return o;
    if (const char* env = std::getenv(kThreadEnvVar)) {
        try {
            long v = std::stol(env);
            if (v > 0) return static_cast<unsigned>(v);
        } catch (...) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) over contiguous blocks. If several indices throw,
// the exception of the smallest index is rethrown so failures are reproducible.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    if (n == 0) return;
    const std::size_t workers = std::min<std::size_t>(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::size_t> error_index(workers, std::numeric_limits<std::size_t>::max());
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t block = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * block;
        const std::size_t hi = std::min(n, lo + block);
        pool.emplace_back([&, w, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) {
                try {
                    fn(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                    error_index[w] = i;
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    auto first = std::min_element(error_index.begin(), error_index.end());
    if (*first != std::numeric_limits<std::size_t>::max())
        std::rethrow_exception(errors[static_cast<std::size_t>(first - error_index.begin())]);
}

// Pairwise (tree) summation. The reduction tree depends only on the length,
// never on the thread count.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

}  // namespace bdvar
