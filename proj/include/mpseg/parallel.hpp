#pragma once
#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace mpseg {

/// Runs fn(i) for i in [0, n) on up to `threads` workers using a static
/// contiguous partition. Each fn(i) must touch only state owned by item i;
/// under that contract the result is bit-identical for any thread count.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (n == 0) return;
    if (threads == 0) threads = std::thread::hardware_concurrency();
    threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n));

    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }

    std::vector<std::thread> workers;
    workers.reserve(threads);
    std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        std::size_t begin = static_cast<std::size_t>(t) * chunk;
        std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        workers.emplace_back([&fn, begin, end] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& w : workers) w.join();
}

}  // namespace mpseg
