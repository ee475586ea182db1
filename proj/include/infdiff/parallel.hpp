#ifndef INFDIFF_PARALLEL_HPP
#define INFDIFF_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

namespace infdiff {

/**
 * Runs `count` independent tasks, `task(k)` for each `k` in `[0, count)`, and returns once all have finished.
 * Implementations choose order and concurrency; callers must not depend on either.
 */
using Executor = std::function<void(std::size_t count, const std::function<void(std::size_t)>& task)>;

inline void run_sequential(std::size_t count, const std::function<void(std::size_t)>& task) {
    for (std::size_t k = 0; k < count; ++k) {
        task(k);
    }
}

namespace detail {
inline thread_local bool inside_worker = false;
}

/**
 * Executor backed by up to `threads` short-lived worker threads.
 * Calls made from inside a worker run inline so nested parallel sections never oversubscribe.
 */
inline Executor thread_executor(unsigned threads) {
    if (threads <= 1) {
        return run_sequential;
    }
    return [threads](std::size_t count, const std::function<void(std::size_t)>& task) {
        if (count <= 1 || detail::inside_worker) {
            run_sequential(count, task);
            return;
        }
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_lock;
        auto body = [&]() {
            detail::inside_worker = true;
            for (std::size_t k = next++; k < count; k = next++) {
                try {
                    task(k);
                } catch (...) {
                    std::lock_guard<std::mutex> guard(failure_lock);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
            detail::inside_worker = false;
        };
        const std::size_t workers = std::min<std::size_t>(threads, count);
        std::vector<std::thread> pool;
        pool.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w) {
            pool.emplace_back(body);
        }
        body();
        for (auto& t : pool) {
            t.join();
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    };
}

/// Runs tasks one at a time in a seeded random permutation. Used to check order independence.
inline Executor shuffled_executor(std::uint64_t seed) {
    auto engine = std::make_shared<std::mt19937_64>(seed);
    return [engine](std::size_t count, const std::function<void(std::size_t)>& task) {
        std::vector<std::size_t> order(count);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), *engine);
        for (auto k : order) {
            task(k);
        }
    };
}

inline unsigned default_thread_count() {
    return std::max(1u, std::thread::hardware_concurrency());
}

} // namespace infdiff

#endif
