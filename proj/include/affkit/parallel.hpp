#pragma once

#include <functional>

namespace affkit {

/// Worker count for a requested --jobs value: non-positive means "use the
/// hardware concurrency", and the result is always at least 1.
int effective_jobs(int requested);

/// Runs fn(chunk_index, begin, end) over [0, total) split into fixed-size
/// chunks. Chunk boundaries depend only on total and chunk_size, never on
/// the worker count, so per-chunk results (and reductions applied in chunk
/// order afterwards) are bitwise reproducible for any jobs value. fn must
/// not throw; workers run it as-is and any escape terminates the process.
void parallel_chunks(int total, int chunk_size, int jobs,
                     const std::function<void(int, int, int)>& fn);

}  // namespace affkit
