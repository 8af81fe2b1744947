#pragma once

#include <cstddef>
#include <functional>

namespace fedrecon {

// Runs fn(0..n-1) on up to `threads` workers (0 means hardware concurrency).
// Work items must be independent; the first exception is rethrown after all
// workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

std::size_t resolve_threads(std::size_t requested);

}  // namespace fedrecon
