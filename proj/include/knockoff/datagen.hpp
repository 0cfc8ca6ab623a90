#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "knockoff/common.hpp"
#include "knockoff/rng.hpp"

namespace knockoff {

/// Three-component Gaussian mixture: component k has mean mean_step*(k-1) on
/// every coordinate and AR(1) covariance with correlation rho_base^(k-0.1).
struct GaussianMixtureSpec {
  Eigen::Vector3d weights{0.4, 0.2, 0.4};
  double mean_step = 20.0;
  double rho_base = 0.6;

  void validate() const {
    require(weights.minCoeff() >= 0.0, "GaussianMixtureSpec: negative weight");
    require(std::abs(weights.sum() - 1.0) <= 1e-9,
            "GaussianMixtureSpec: weights must sum to 1");
    require(rho_base > 0.0 && rho_base < 1.0,
            "GaussianMixtureSpec: rho_base must lie in (0,1)");
  }

  double rho(int component) const {
    return std::pow(rho_base, component + 1 - 0.1);
  }
};

/// The ten mixture-weight presets shipped with the experiment harness,
/// 1-indexed. Preset 10 is stored as printed (0.333 each) and normalized on
/// access so it satisfies the simplex invariant.
inline const std::array<Eigen::Vector3d, 10>& mixture_weight_table() {
  static const std::array<Eigen::Vector3d, 10> table = {{
      {0.562, 0.384, 0.054},
      {0.430, 0.168, 0.402},
      {0.317, 0.324, 0.359},
      {0.316, 0.388, 0.296},
      {0.439, 0.488, 0.073},
      {0.314, 0.041, 0.645},
      {0.656, 0.282, 0.062},
      {0.200, 0.300, 0.500},
      {0.500, 0.300, 0.200},
      {0.333, 0.333, 0.333},
  }};
  return table;
}

inline GaussianMixtureSpec mixture_weight_preset(int index) {
  require(index >= 1 && index <= 10,
          "mixture_weight_preset: index must be in [1, 10]");
  GaussianMixtureSpec spec;
  Eigen::Vector3d w = mixture_weight_table()[static_cast<std::size_t>(index - 1)];
  spec.weights = w / w.sum();
  return spec;
}

enum class CopulaFamily { Clayton, Joe };
enum class CopulaMarginal { Uniform, Exponential };

struct CopulaSpec {
  CopulaFamily family = CopulaFamily::Clayton;
  double theta = 2.0;
  CopulaMarginal marginal = CopulaMarginal::Uniform;

  void validate() const {
    if (family == CopulaFamily::Clayton) {
      require(theta > 0.0, "CopulaSpec: Clayton requires theta > 0");
    } else if (family == CopulaFamily::Joe) {
      require(theta >= 1.0, "CopulaSpec: Joe requires theta >= 1");
    } else {
      throw std::invalid_argument("CopulaSpec: unsupported family");
    }
  }
};

/// Sparse signal: num_nonnull coefficients of magnitude p/(scale_divisor*sqrt(n))
/// with Rademacher signs, the rest exactly zero.
struct CoefficientSpec {
  double scale_divisor = 15.0;
  int num_nonnull = 20;

  void validate(int p) const {
    require(scale_divisor > 0.0, "CoefficientSpec: scale_divisor must be > 0");
    require(num_nonnull >= 0 && num_nonnull <= p,
            "CoefficientSpec: num_nonnull must be in [0, p]");
  }
};

struct Coefficients {
  Vector beta;
  std::vector<bool> nonnull;
};

struct SyntheticDataset {
  Matrix x;
  Vector y;
  Vector beta_star;
  std::vector<bool> nonnull;
  std::uint64_t seed = 0;
};

inline Matrix sample_gaussian_mixture(const GaussianMixtureSpec& spec, int n,
                                      int p, std::uint64_t seed) {
  spec.validate();
  require(n >= 2 && p >= 2, "sample_gaussian_mixture: need n >= 2 and p >= 2");
  Rng rng(seed);
  Matrix x(n, p);
  const Eigen::Vector3d w = spec.weights;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    int k = 0;
    double cum = w(0);
    while (k < 2 && u >= cum) cum += w(++k);
    const double rho = spec.rho(k);
    const double scale = std::sqrt(1.0 - rho * rho);
    // AR(1) recursion reproduces the Toeplitz covariance rho^|i-j| exactly.
    double prev = rng.normal();
    x(i, 0) = prev;
    for (int j = 1; j < p; ++j) {
      prev = rho * prev + scale * rng.normal();
      x(i, j) = prev;
    }
    x.row(i).array() += spec.mean_step * k;
  }
  return x;
}

namespace detail {

/// Sibuya(alpha) sample by exact inversion of the survival function
/// S(k) = Gamma(k+1-alpha) / (Gamma(1-alpha) Gamma(k+1)). The asymptotic
/// S(k) ~ k^-alpha / Gamma(1-alpha) gives a starting point; a monotone walk
/// finishes the inversion.
inline std::int64_t sibuya_sample(double alpha, Rng& rng) {
  require(alpha > 0.0 && alpha <= 1.0, "sibuya_sample: alpha in (0, 1]");
  if (alpha == 1.0) return 1;
  const double u = rng.uniform_open();
  const double lg1ma = std::lgamma(1.0 - alpha);
  auto survival = [&](double k) {
    return std::exp(std::lgamma(k + 1.0 - alpha) - lg1ma -
                    std::lgamma(k + 1.0));
  };
  double k = std::floor(std::pow(u * std::exp(lg1ma), -1.0 / alpha));
  k = std::max(1.0, std::min(k, 1e15));
  while (k > 1.0 && survival(k - 1.0) <= u) k -= 1.0;
  while (survival(k) > u) k += 1.0;
  return static_cast<std::int64_t>(k);
}

}  // namespace detail

/// Exchangeable Archimedean copula sample via the frailty construction:
/// U_j = psi(E_j / V) with E_j iid exponential and V the family frailty
/// (Gamma(1/theta) for Clayton, Sibuya(1/theta) for Joe).
inline Matrix sample_archimedean_copula(const CopulaSpec& spec, int n, int p,
                                        std::uint64_t seed) {
  spec.validate();
  require(n >= 2 && p >= 2, "sample_archimedean_copula: need n, p >= 2");
  Rng rng(seed);
  Matrix x(n, p);
  for (int i = 0; i < n; ++i) {
    double u = 0.0;
    if (spec.family == CopulaFamily::Clayton) {
      const double v = rng.gamma(1.0 / spec.theta);
      for (int j = 0; j < p; ++j) {
        u = std::pow(1.0 + rng.exponential() / v, -1.0 / spec.theta);
        x(i, j) = u;
      }
    } else {
      const double v =
          static_cast<double>(detail::sibuya_sample(1.0 / spec.theta, rng));
      for (int j = 0; j < p; ++j) {
        const double t = rng.exponential() / v;
        u = 1.0 - std::pow(-std::expm1(-t), 1.0 / spec.theta);
        x(i, j) = u;
      }
    }
  }
  if (spec.marginal == CopulaMarginal::Exponential) {
    // Inverse CDF of the rate-1 exponential; u < 1 almost surely.
    x = (-(1.0 - x.array()).log()).matrix();
  }
  return x;
}

inline Coefficients sample_coefficients(const CoefficientSpec& spec, int n,
                                        int p, std::uint64_t seed) {
  spec.validate(p);
  require(n >= 1, "sample_coefficients: n must be positive");
  Rng rng(seed);
  Coefficients out;
  out.beta = Vector::Zero(p);
  out.nonnull.assign(static_cast<std::size_t>(p), false);
  const double magnitude =
      static_cast<double>(p) / (spec.scale_divisor * std::sqrt(n));
  for (int j : rng.sample_without_replacement(p, spec.num_nonnull)) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    out.beta(j) = magnitude * sign;
    out.nonnull[static_cast<std::size_t>(j)] = true;
  }
  return out;
}

inline Vector synthesize_linear_response(const Matrix& x, const Vector& beta,
                                         std::uint64_t seed,
                                         bool noiseless = false) {
  require(x.cols() == beta.size(),
          "synthesize_linear_response: dimension mismatch");
  Rng rng(seed);
  Vector y = x * beta;
  if (!noiseless) {
    for (int i = 0; i < y.size(); ++i) y(i) += rng.normal();
  }
  return y;
}

struct TanhResponseCoeffs {
  std::vector<int> covariates;              // m chosen columns, group-ordered
  std::vector<std::array<double, 5>> phi;   // one row of phis per group of 4
};

struct TanhResponse {
  Vector y;
  std::vector<bool> nonnull;
  TanhResponseCoeffs coeffs;
};

/// Nonlinear response: m covariates are chosen uniformly and consumed in
/// groups of four; each group contributes a linear pair plus a tanh-coupled
/// pair with Gaussian weights. `forced` pins the coefficients (test hook).
inline TanhResponse synthesize_tanh_response(
    const Matrix& x, int m, std::uint64_t seed,
    const TanhResponseCoeffs* forced = nullptr) {
  const int p = static_cast<int>(x.cols());
  require(m > 0 && m % 4 == 0, "synthesize_tanh_response: m divisible by 4");
  require(m <= p, "synthesize_tanh_response: m <= p");
  Rng rng(seed);

  TanhResponse out;
  if (forced) {
    out.coeffs = *forced;
    require(static_cast<int>(out.coeffs.covariates.size()) == m,
            "synthesize_tanh_response: forced covariate count mismatch");
    require(out.coeffs.phi.size() == static_cast<std::size_t>(m / 4),
            "synthesize_tanh_response: forced phi group count mismatch");
  } else {
    out.coeffs.covariates = rng.sample_without_replacement(p, m);
    out.coeffs.phi.resize(static_cast<std::size_t>(m / 4));
    for (auto& g : out.coeffs.phi) {
      g[0] = 1.0 + rng.normal();
      g[1] = 1.0 + rng.normal();
      g[2] = 2.0 + rng.normal();
      g[3] = 2.0 + rng.normal();
      g[4] = 2.0 + rng.normal();
    }
  }

  const int n = static_cast<int>(x.rows());
  out.y = Vector::Zero(n);
  for (int i = 0; i < n; ++i) out.y(i) = rng.normal();
  for (int k = 0; k < m / 4; ++k) {
    const auto& g = out.coeffs.phi[static_cast<std::size_t>(k)];
    const int c0 = out.coeffs.covariates[static_cast<std::size_t>(4 * k)];
    const int c1 = out.coeffs.covariates[static_cast<std::size_t>(4 * k + 1)];
    const int c2 = out.coeffs.covariates[static_cast<std::size_t>(4 * k + 2)];
    const int c3 = out.coeffs.covariates[static_cast<std::size_t>(4 * k + 3)];
    out.y += g[0] * x.col(c0) + g[2] * x.col(c1) +
             (g[3] * (g[1] * x.col(c2) + g[4] * x.col(c3)).array().tanh())
                 .matrix();
  }
  out.nonnull.assign(static_cast<std::size_t>(p), false);
  for (int j : out.coeffs.covariates)
    out.nonnull[static_cast<std::size_t>(j)] = true;
  return out;
}

/// Column-wise standardization to mean 0 and population standard deviation 1.
inline Matrix standardize_columns(const Matrix& x) {
  require(x.rows() >= 2, "standardize_columns: need at least 2 rows");
  Matrix out = x;
  for (int j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().mean();
    if (!(var > 0.0)) {
      throw DegenerateColumnError(
          "standardize_columns: column " + std::to_string(j) +
              " has zero variance",
          j);
    }
    out.col(j) = (x.col(j).array() - mean) / std::sqrt(var);
  }
  return out;
}

inline std::pair<std::vector<int>, std::vector<int>> split_indices(
    int n, double ratio, std::uint64_t seed) {
  require(n >= 5, "split_indices: need n >= 5");
  require(ratio > 0.0 && ratio < 1.0, "split_indices: ratio in (0,1)");
  const int n_train = static_cast<int>(
      std::ceil(ratio * static_cast<double>(n) - 1e-12));
  Rng rng(seed);
  std::vector<int> perm = rng.permutation(n);
  std::vector<int> train(perm.begin(), perm.begin() + n_train);
  std::vector<int> val(perm.begin() + n_train, perm.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

inline Matrix select_rows(const Matrix& x, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  return out;
}

inline std::pair<Matrix, Matrix> split_train_val(const Matrix& x,
                                                 double ratio,
                                                 std::uint64_t seed) {
  const auto [train, val] =
      split_indices(static_cast<int>(x.rows()), ratio, seed);
  return {select_rows(x, train), select_rows(x, val)};
}

/// Test-harness knockoff: each column independently permuted. Valid (exactly)
/// when the columns of x are independent; preserves column marginals always.
inline Matrix oracle_knockoff_independent(const Matrix& x,
                                          std::uint64_t seed) {
  Rng rng(seed);
  Matrix out(x.rows(), x.cols());
  const int n = static_cast<int>(x.rows());
  for (int j = 0; j < x.cols(); ++j) {
    const std::vector<int> perm = rng.permutation(n);
    for (int i = 0; i < n; ++i) out(i, j) = x(perm[static_cast<std::size_t>(i)], j);
  }
  return out;
}

}  // namespace knockoff
