#include "gleamcast/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <exception>
#include <string>
#include <vector>

namespace gleamcast::par {

int thread_cap() {
  if (const char* env = std::getenv("GLEAMCAST_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return omp_get_max_threads();
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void for_each_member(std::size_t n, Exec exec, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::int64_t>(n);
  if (exec == Exec::parallel && n > 1) {
#pragma omp parallel for schedule(dynamic, 1) num_threads(thread_cap())
    for (std::int64_t i = 0; i < count; ++i) {
      try {
        fn(static_cast<std::size_t>(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    for (std::int64_t i = 0; i < count; ++i) {
      try {
        fn(static_cast<std::size_t>(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double blocked_sum(std::size_t n, Exec exec, const std::function<double(std::size_t)>& term) {
  const std::size_t blocks = (n + kSumBlock - 1) / kSumBlock;
  std::vector<double> partial(blocks, 0.0);
  auto run_block = [&](std::size_t b) {
    const std::size_t lo = b * kSumBlock;
    const std::size_t hi = std::min(n, lo + kSumBlock);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    partial[b] = s;
  };
  const auto nb = static_cast<std::int64_t>(blocks);
  if (exec == Exec::parallel && blocks > 1) {
#pragma omp parallel for schedule(static) num_threads(thread_cap())
    for (std::int64_t b = 0; b < nb; ++b) run_block(static_cast<std::size_t>(b));
  } else {
    for (std::int64_t b = 0; b < nb; ++b) run_block(static_cast<std::size_t>(b));
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace gleamcast::par
