#pragma once

#include <cstdint>
#include <functional>
#include <random>

namespace nvcharge::rng {

using Engine = std::mt19937_64;

/// Seed used whenever the caller does not supply one.
inline constexpr std::uint64_t kDefaultSeed = 20180411;

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Seed of stream `stream` under master seed `master`:
/// mix64(master + (stream + 1) * 0x9E3779B97F4A7C15). Distinct streams give
/// statistically independent mt19937_64 sequences.
std::uint64_t stream_seed(std::uint64_t master, std::uint64_t stream);

inline Engine make_engine(std::uint64_t master, std::uint64_t stream) {
  return Engine(stream_seed(master, stream));
}

/// Runs body(batch) for batch = 0..n_batches-1 on up to `threads` workers.
/// Each batch must own its RNG stream and write only its own output slot, so
/// results do not depend on the thread count.
void parallel_batches(std::size_t n_batches, unsigned threads,
                      const std::function<void(std::size_t)>& body);

}  // namespace nvcharge::rng
