#ifndef MMFP_PARALLEL_HPP
#define MMFP_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mmfp/types.hpp"

namespace mmfp {

/// Worker count from MMFP_WORKERS, defaulting to the hardware concurrency.
inline unsigned worker_count()
{
    if (const char* env = std::getenv("MMFP_WORKERS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) {
                return static_cast<unsigned>(v);
            }
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

//
// Runs fn(i) for i in [0, count).  Tasks are handed out dynamically, so fn
// must write only to slots owned by i; results are then independent of the
// worker count.
//
template <typename Fn>
void parallel_for(Index count, Fn&& fn, unsigned workers = worker_count())
{
    if (count <= 0) {
        return;
    }
    workers = static_cast<unsigned>(std::min<Index>(workers, count));
    if (workers <= 1) {
        for (Index i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<Index> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const Index i = next.fetch_add(1);
            if (i >= count) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) {
                    error = std::current_exception();
                }
                next.store(count);
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) {
        pool.emplace_back(body);
    }
    body();
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

} // namespace mmfp

#endif
