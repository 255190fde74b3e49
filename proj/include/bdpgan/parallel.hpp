/*
 * Copyright 2026 The bdpgan Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef BDPGAN_PARALLEL_HPP_
#define BDPGAN_PARALLEL_HPP_

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace bdpgan {

// Examples are processed in fixed-size chunks; callers reduce per-chunk
// results in chunk order, so output does not depend on the thread count.
inline constexpr std::size_t kExampleChunk = 16;

inline std::size_t chunk_count(std::size_t n, std::size_t chunk = kExampleChunk) {
  return (n + chunk - 1) / chunk;
}

// fn(worker, chunk_index, begin, end). Chunks are dealt round-robin.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t threads, Fn&& fn,
                     std::size_t chunk = kExampleChunk) {
  const std::size_t chunks = chunk_count(n, chunk);
  threads = std::max<std::size_t>(1, std::min(threads, chunks));
  auto run = [&](std::size_t worker) {
    for (std::size_t c = worker; c < chunks; c += threads) {
      fn(worker, c, c * chunk, std::min(n, (c + 1) * chunk));
    }
  };
  if (threads == 1) {
    run(0);
    return;
  }
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        run(w);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace bdpgan

#endif  // BDPGAN_PARALLEL_HPP_
