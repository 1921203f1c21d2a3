// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace psae {

/// Worker count: PSAE_THREADS if set and positive, else hardware concurrency (>= 1).
std::size_t thread_count();

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is visited
/// by exactly one call, so per-item results are independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace psae
