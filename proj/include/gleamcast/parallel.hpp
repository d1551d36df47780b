#pragma once

// Member-level parallelism. Ensemble members (bootstrap replicates, SGNHT
// chains, dropout passes, restarts, simulator members) are independent and
// each owns an RNG stream derived from (master seed, member index), so the
// serial and OpenMP paths produce bit-identical results.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>

namespace gleamcast::par {

using Rng = std::mt19937_64;

enum class Exec { serial, parallel };

/// Worker cap: GLEAMCAST_THREADS when set to a positive integer, otherwise
/// the OpenMP default.
int thread_cap();

/// SplitMix64 mix of a master seed and a stream index.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

inline Rng make_rng(std::uint64_t master, std::uint64_t index) {
  return Rng(derive_seed(master, index));
}

/// Calls fn(i) for i in [0, n). With Exec::parallel the calls are spread over
/// OpenMP threads. If any call throws, the exception of the lowest index is
/// rethrown after all calls finish.
void for_each_member(std::size_t n, Exec exec, const std::function<void(std::size_t)>& fn);

/// Sum of term(i) over [0, n) using fixed blocks combined in block order;
/// the result does not depend on exec or thread count.
double blocked_sum(std::size_t n, Exec exec, const std::function<double(std::size_t)>& term);

constexpr std::size_t kSumBlock = 4096;

}  // namespace gleamcast::par
