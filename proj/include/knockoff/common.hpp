#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace knockoff {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Sample geometry is degenerate where spread is required (e.g. a zero SWD
/// denominator in the sliced Wasserstein correlation).
class DegenerateSampleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A constant column was found where unit variance is required.
class DegenerateColumnError : public std::runtime_error {
 public:
  DegenerateColumnError(const std::string& msg, int column)
      : std::runtime_error(msg), column_(column) {}
  int column() const { return column_; }

 private:
  int column_;
};

/// A weight vector with zero norm was passed where a direction is required.
class DegenerateWeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite or runaway loss. Carries the tail of the
/// training log so the failure can be diagnosed.
class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(const std::string& msg, std::string log_tail)
      : std::runtime_error(msg), log_tail_(std::move(log_tail)) {}
  const std::string& log_tail() const { return log_tail_; }

 private:
  std::string log_tail_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace knockoff
