#pragma once

#include <cstddef>
#include <functional>

namespace hjblab {

/// Process-wide worker count. 0 means "use hardware concurrency"; the CLI
/// sets this once from --workers before running any stage.
void set_worker_count(unsigned n);
unsigned worker_count();

/// Chunked loop over [0, n). `body` receives disjoint [begin, end) ranges.
/// Chunking is deterministic, so per-index work that seeds itself from the
/// index produces identical results for any worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace hjblab
