#pragma once

#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

namespace rtd {

/// Deterministic parallel reduction: the index range is cut into
/// fixed-size chunks, each chunk accumulates into its own accumulator,
/// and the partials are merged in chunk order. Chunk boundaries do not
/// depend on the thread count, so the floating-point result is
/// identical for any `threads` value, including 1.
///
/// PerChunk: void(std::int64_t begin, std::int64_t end, Acc& local)
/// Merge:    void(Acc& into, const Acc& part)
template <class Acc, class PerChunk, class Merge>
Acc chunked_reduce(std::int64_t n, std::int64_t chunk_size, int threads, const Acc& zero,
                   PerChunk per_chunk, Merge merge) {
    if (n <= 0) return zero;
    if (chunk_size <= 0) chunk_size = 1;
    const std::int64_t n_chunks = (n + chunk_size - 1) / chunk_size;
    std::vector<Acc> partials(static_cast<std::size_t>(n_chunks), zero);

    auto run_chunk = [&](std::int64_t c) {
        const std::int64_t begin = c * chunk_size;
        const std::int64_t end = std::min(n, begin + chunk_size);
        per_chunk(begin, end, partials[static_cast<std::size_t>(c)]);
    };

    if (threads <= 1 || n_chunks == 1) {
        for (std::int64_t c = 0; c < n_chunks; ++c) run_chunk(c);
    } else {
        std::atomic<std::int64_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const std::int64_t c = next.fetch_add(1);
                if (c >= n_chunks) return;
                run_chunk(c);
            }
        };
        std::vector<std::thread> pool;
        const int nt = std::min<std::int64_t>(threads, n_chunks);
        pool.reserve(static_cast<std::size_t>(nt));
        for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    Acc total = zero;
    for (const Acc& part : partials) merge(total, part);
    return total;
}

} // namespace rtd
