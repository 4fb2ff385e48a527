#include "fcmesh/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace fcmesh {

namespace {

std::size_t threads_from_env()
{
    if (const char* env = std::getenv("FCMESH_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1)
                return static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    return 1;
}

std::atomic<std::size_t>& workers()
{
    static std::atomic<std::size_t> n{threads_from_env()};
    return n;
}

}  // namespace

std::size_t worker_count() { return workers().load(); }

void set_worker_count(std::size_t n) { workers().store(std::max<std::size_t>(1, n)); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body)
{
    const std::size_t w = std::min(worker_count(), n);
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            body(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (std::size_t t = 0; t < w; ++t) {
        pool.emplace_back([&, t] {
            const std::size_t begin = n * t / w;
            const std::size_t end = n * (t + 1) / w;
            try {
                for (std::size_t i = begin; i < end; ++i)
                    body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
            }
        });
    }
    for (auto& th : pool)
        th.join();
    if (error)
        std::rethrow_exception(error);
}

}  // namespace fcmesh
