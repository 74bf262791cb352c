#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace xfr {

/// Thrown when a configuration file or command-line usage is invalid.
/// The CLI maps this to exit code 2; everything else maps to 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Deterministic RNG. Wraps mt19937_64 and derives all variates from the
/// raw 64-bit stream directly, so sequences are reproducible independent
/// of the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(
                    (static_cast<unsigned __int128>(next()) * span) >> 64);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  /// Sub-stream with a fixed offset, for components that need their own
  /// reproducible sequence derived from one master seed.
  Rng fork(uint64_t offset) const {
    return Rng(seed_mix_ ^ (0x9e3779b97f4a7c15ULL * (offset + 1)));
  }

  explicit Rng(uint64_t seed, uint64_t mix) : eng_(seed), seed_mix_(mix) {}

 private:
  std::mt19937_64 eng_;
  uint64_t seed_mix_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

namespace detail {
inline int& thread_count_storage() {
  static int count = []() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }();
  return count;
}
inline thread_local bool inside_worker = false;
}  // namespace detail

inline int thread_count() { return detail::thread_count_storage(); }

inline void set_thread_count(int n) {
  detail::thread_count_storage() = n < 1 ? 1 : n;
}

/// Static-partition parallel loop. fn(begin, end) is invoked on disjoint
/// index ranges covering [0, n). Each index is owned by exactly one
/// invocation, so any per-index accumulation order is identical no matter
/// how many threads run; results are bitwise reproducible. Nested calls
/// degrade to serial execution.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn) {
  if (n <= 0) return;
  const int threads = detail::inside_worker ? 1 : thread_count();
  if (threads <= 1 || n < 2) {
    fn(int64_t{0}, n);
    return;
  }
  const int64_t k = std::min<int64_t>(threads, n);
  const int64_t chunk = (n + k - 1) / k;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(k - 1));
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto run = [&](int64_t begin, int64_t end) {
    detail::inside_worker = true;
    try {
      fn(begin, end);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!first_error) first_error = std::current_exception();
    }
    detail::inside_worker = false;
  };
  for (int64_t t = 1; t < k; ++t) {
    const int64_t begin = t * chunk;
    const int64_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(run, begin, end);
  }
  run(0, std::min(n, chunk));
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace xfr
