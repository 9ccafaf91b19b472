#pragma once

#include <cstddef>
#include <functional>

namespace shapegan::detail {

// Splits [0, n) into contiguous chunks, one per worker, and calls
// body(chunk_index, begin, end). Returns the number of chunks used.
std::size_t parallel_chunks(std::size_t n,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

std::size_t chunk_count(std::size_t n);

}  // namespace shapegan::detail
