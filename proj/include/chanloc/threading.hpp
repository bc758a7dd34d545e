#pragma once

#include <cstddef>
#include <functional>

namespace chanloc {

// Number of worker threads internal parallel loops may use. Resolved once
// from the CHANLOC_THREADS environment variable, falling back to the
// hardware concurrency. A budget of 1 selects strict-sequential mode.
std::size_t thread_budget();

// Overrides the resolved budget for the current process (0 restores the
// environment-derived value).
void set_thread_budget(std::size_t threads);

bool strict_sequential();

// Number of chunks parallel_chunks will split `count` items into.
std::size_t chunk_count(std::size_t count);

// Runs body(chunk, begin, end) over [0, count) split into chunk_count(count)
// contiguous chunks. Chunks must touch disjoint state; exceptions are
// rethrown on the calling thread. Chunk boundaries depend only on the count
// and the budget, so per-chunk partial results can be reduced in chunk order.
void parallel_chunks(std::size_t count,
                     const std::function<void(std::size_t chunk, std::size_t begin, std::size_t end)>& body);

// Convenience wrapper: body(i) for each i in [0, count), element-parallel.
void parallel_for(std::size_t count, const std::function<void(std::size_t i)>& body);

}  // namespace chanloc
