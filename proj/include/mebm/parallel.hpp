#pragma once

// Data-parallel loops. Work is split into fixed chunks whose boundaries do
// not depend on the thread count, and every chunk writes a disjoint output
// range, so results are bitwise identical for any MEBM_THREADS value.

#include <tbb/blocked_range.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>

namespace mebm {

/// Thread cap from MEBM_THREADS (unset or invalid: hardware concurrency).
inline std::size_t configured_threads() {
    const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("MEBM_THREADS")) {
        try {
            const long value = std::stol(env);
            if (value >= 1) {
                return static_cast<std::size_t>(value);
            }
        } catch (const std::exception&) {
        }
    }
    return hw;
}

namespace detail {
inline tbb::global_control& thread_limit() {
    static tbb::global_control control(tbb::global_control::max_allowed_parallelism,
                                       configured_threads());
    return control;
}
}  // namespace detail

/// Calls body(begin, end) over [0, n) in chunks of `grain` items.
template <class Body>
void parallel_chunks(std::size_t n, std::size_t grain, Body&& body) {
    if (n == 0) {
        return;
    }
    grain = std::max<std::size_t>(1, grain);
    const std::size_t n_chunks = (n + grain - 1) / grain;
    if (n_chunks == 1 || configured_threads() == 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) {
            body(c * grain, std::min(n, (c + 1) * grain));
        }
        return;
    }
    detail::thread_limit();
    tbb::parallel_for(
        tbb::blocked_range<std::size_t>(0, n_chunks, 1),
        [&](const tbb::blocked_range<std::size_t>& r) {
            for (std::size_t c = r.begin(); c != r.end(); ++c) {
                body(c * grain, std::min(n, (c + 1) * grain));
            }
        },
        tbb::simple_partitioner());
}

/// Calls body(i) for every i in [0, n).
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t grain = 1) {
    parallel_chunks(n, grain, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            body(i);
        }
    });
}

}  // namespace mebm
