#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace armkit {

// Runs fn(block) for block in [0, n_blocks) on up to `threads` workers. Blocks
// are assigned round-robin; callers write results into per-block slots and
// reduce them in block order, so output does not depend on the thread count.
template <typename Fn>
void for_each_block(std::size_t n_blocks, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n_blocks));
  if (threads == 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) fn(b);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t b = t; b < n_blocks; b += threads) fn(b);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace armkit
