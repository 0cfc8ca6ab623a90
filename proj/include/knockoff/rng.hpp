#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string_view>
#include <type_traits>
#include <vector>

#include "knockoff/common.hpp"

namespace knockoff {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace detail {
inline std::uint64_t seed_part(std::uint64_t v) { return v; }
inline std::uint64_t seed_part(std::string_view tag) { return fnv1a64(tag); }
template <typename T, typename = std::enable_if_t<std::is_integral_v<T>>>
std::uint64_t seed_part_dispatch(T v) {
  return seed_part(static_cast<std::uint64_t>(v));
}
inline std::uint64_t seed_part_dispatch(std::string_view tag) {
  return seed_part(tag);
}
inline std::uint64_t seed_part_dispatch(const char* tag) {
  return seed_part(std::string_view(tag));
}
}  // namespace detail

/// Mixes a base seed with any number of integer or string parts. Used for the
/// seed ladders: every stochastic stage of a run derives its own stream as
/// derive_seed(base, "stage", index, ...).
template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t base, Parts... parts) {
  std::uint64_t s = splitmix64(base);
  ((s = splitmix64(s ^ (0x9e3779b97f4a7c15ULL +
                        detail::seed_part_dispatch(parts)))),
   ...);
  return s;
}

/// Process-unique seed for callers that did not pin one.
inline std::uint64_t fresh_seed() {
  static std::atomic<std::uint64_t> counter{
      static_cast<std::uint64_t>(std::random_device{}())};
  return splitmix64(counter.fetch_add(1, std::memory_order_relaxed) ^
                    0xa5a5a5a5deadbeefULL);
}

/// Seeded random stream with the draws the generators need. Deterministic for
/// a fixed seed on a fixed platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed ^ kSalt)) {}

  std::mt19937_64& engine() { return engine_; }

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  double normal() {
    return std::normal_distribution<double>(0.0, 1.0)(engine_);
  }

  double exponential() { return -std::log(uniform_open()); }

  double gumbel() { return -std::log(-std::log(uniform_open())); }

  double gamma(double shape) {
    return std::gamma_distribution<double>(shape, 1.0)(engine_);
  }

  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  std::vector<int> permutation(int n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), engine_);
    return idx;
  }

  /// k distinct indices from [0, n), in ascending order.
  std::vector<int> sample_without_replacement(int n, int k) {
    require(k >= 0 && k <= n, "sample_without_replacement: k out of range");
    std::vector<int> idx = permutation(n);
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  Matrix normal_matrix(int rows, int cols) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  Matrix uniform_matrix(int rows, int cols) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = uniform();
    return m;
  }

  Matrix gumbel_matrix(int rows, int cols) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = gumbel();
    return m;
  }

 private:
  static constexpr std::uint64_t kSalt = 0x9d2c5680f0f0f0f0ULL;
  std::mt19937_64 engine_;
};

}  // namespace knockoff
