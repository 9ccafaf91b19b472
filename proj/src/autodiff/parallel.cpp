#include "parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

#include "shapegan/ops.hpp"

namespace shapegan {

namespace {
std::atomic<std::size_t> thread_limit{1};
}

void set_num_threads(std::size_t n) { thread_limit = std::max<std::size_t>(1, n); }
std::size_t num_threads() { return thread_limit; }

namespace detail {

std::size_t chunk_count(std::size_t n) { return std::max<std::size_t>(1, std::min(n, num_threads())); }

std::size_t parallel_chunks(std::size_t n,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
    const std::size_t chunks = chunk_count(n);
    if (chunks == 1) {
        body(0, 0, n);
        return 1;
    }
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t begin = n * c / chunks;
        const std::size_t end = n * (c + 1) / chunks;
        workers.emplace_back([&, c, begin, end] {
            try {
                body(c, begin, end);
            } catch (...) {
                errors[c] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return chunks;
}

}  // namespace detail
}  // namespace shapegan
