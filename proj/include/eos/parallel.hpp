#pragma once

#include <cstddef>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace eos {

struct ExecOptions {
    // 0 = use EOS_THREADS if set, else hardware concurrency.
    std::size_t threads = 0;
    // Reduce per-chunk partial results in chunk order (bit-reproducible).
    // When false, partials are folded in completion order.
    bool deterministic = true;
};

std::size_t resolve_thread_count(const ExecOptions& opts);

// Runs body(i) for i in [0, n) across up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

// Maps each chunk to a partial result and folds them with combine(acc, part).
template <typename T, typename Map, typename Combine>
T map_reduce_chunks(std::size_t n, const ExecOptions& opts, Map&& map, Combine&& combine) {
    const std::size_t threads = resolve_thread_count(opts);
    if (opts.deterministic || threads <= 1) {
        std::vector<std::optional<T>> parts(n);
        parallel_for(n, threads, [&](std::size_t i) { parts[i].emplace(map(i)); });
        T acc = std::move(*parts.at(0));
        for (std::size_t i = 1; i < n; ++i) combine(acc, *parts[i]);
        return acc;
    }
    std::mutex mu;
    std::optional<T> acc;
    parallel_for(n, threads, [&](std::size_t i) {
        T part = map(i);
        std::lock_guard lock(mu);
        if (!acc) acc.emplace(std::move(part));
        else combine(*acc, part);
    });
    return std::move(*acc);
}

}  // namespace eos
