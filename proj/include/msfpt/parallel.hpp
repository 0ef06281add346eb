#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

#include "msfpt/tensor.hpp"

namespace msfpt {

/// Runs job(i) for i in [0, n) on up to `threads` workers, striding i by the
/// worker count. Workers inherit the caller's graph-recording mode. After all
/// jobs finish, the exception of the lowest failing index is rethrown.
template <typename Job>
void parallel_for(std::size_t n, std::size_t threads, const Job& job) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    const bool record = grad_enabled();
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(threads, n);
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            std::optional<NoGradGuard> guard;
            if (!record) guard.emplace();
            for (std::size_t i = t; i < n; i += workers) {
                try {
                    job(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

/// Worker count from MSFPT_THREADS: unset or 0 means one per hardware
/// thread. Throws ConfigError for anything that is not a non-negative integer.
std::size_t threads_from_env();

}  // namespace msfpt
