#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <vector>

#include "knockoff/common.hpp"
#include "knockoff/rng.hpp"

namespace knockoff {

/// 13 log-spaced ridge penalties covering 1e-3 .. 1e3.
inline std::vector<double> default_penalty_grid() {
  std::vector<double> grid;
  grid.reserve(13);
  for (int i = 0; i <= 12; ++i) grid.push_back(std::pow(10.0, -3.0 + 0.5 * i));
  return grid;
}

namespace detail {
inline Vector ridge_solve(const Matrix& gram, const Vector& xty,
                          double penalty) {
  Matrix reg = gram;
  reg.diagonal().array() += penalty;
  return reg.ldlt().solve(xty);
}
}  // namespace detail

/// Ridge fit with the penalty chosen by k-fold cross-validated squared error
/// over `penalty_grid`, then refit on all rows. The fold assignment comes from
/// `fold_seed` only, so the whole fit is deterministic and invariant under
/// column permutations of the design.
inline Vector fit_ridge(const Matrix& design, const Vector& y,
                        const std::vector<double>& penalty_grid, int folds,
                        std::uint64_t fold_seed) {
  const int n = static_cast<int>(design.rows());
  const int d = static_cast<int>(design.cols());
  require(n == y.size(), "fit_ridge: row count mismatch");
  require(!penalty_grid.empty(), "fit_ridge: empty penalty grid");
  require(folds >= 2, "fit_ridge: need at least 2 folds");
  require(n >= folds, "fit_ridge: need n >= folds");
  require(design.allFinite() && y.allFinite(), "fit_ridge: non-finite input");

  double smallest_positive = std::numeric_limits<double>::infinity();
  for (double lambda : penalty_grid) {
    require(lambda >= 0.0, "fit_ridge: negative penalty");
    if (lambda > 0.0) smallest_positive = std::min(smallest_positive, lambda);
  }
  auto effective = [&](double lambda) {
    if (lambda > 0.0) return lambda;
    if (std::isfinite(smallest_positive)) {
      std::cerr << "[knockoff] warning: ridge penalty 0 is singular-prone; "
                   "using smallest positive grid value "
                << smallest_positive << "\n";
      return smallest_positive;
    }
    throw std::invalid_argument(
        "fit_ridge: penalty grid has no positive entry");
  };

  std::vector<int> fold_of(static_cast<std::size_t>(n));
  {
    Rng rng(fold_seed);
    const std::vector<int> perm = rng.permutation(n);
    for (int r = 0; r < n; ++r)
      fold_of[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)])] =
          r % folds;
  }

  const Matrix gram = design.transpose() * design;
  const Vector xty = design.transpose() * y;

  std::vector<double> cv_error(penalty_grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<int> hold;
    for (int r = 0; r < n; ++r)
      if (fold_of[static_cast<std::size_t>(r)] == f) hold.push_back(r);
    Matrix held(static_cast<Eigen::Index>(hold.size()), d);
    Vector held_y(static_cast<Eigen::Index>(hold.size()));
    for (std::size_t i = 0; i < hold.size(); ++i) {
      held.row(static_cast<Eigen::Index>(i)) = design.row(hold[i]);
      held_y(static_cast<Eigen::Index>(i)) = y(hold[i]);
    }
    const Matrix gram_train = gram - held.transpose() * held;
    const Vector xty_train = xty - held.transpose() * held_y;
    for (std::size_t g = 0; g < penalty_grid.size(); ++g) {
      const Vector beta =
          detail::ridge_solve(gram_train, xty_train, effective(penalty_grid[g]));
      cv_error[g] += (held * beta - held_y).squaredNorm();
    }
  }

  std::size_t best = 0;
  for (std::size_t g = 1; g < penalty_grid.size(); ++g)
    if (cv_error[g] < cv_error[best]) best = g;
  return detail::ridge_solve(gram, xty, effective(penalty_grid[best]));
}

/// Contrast statistics w_j = |beta_j| - |beta_{j+p}| from a 2p coefficient
/// vector fitted on the concatenated design [X, Xtilde].
inline Vector knockoff_statistics(const Vector& beta) {
  require(beta.size() % 2 == 0, "knockoff_statistics: odd coefficient count");
  const int p = static_cast<int>(beta.size()) / 2;
  Vector w(p);
  for (int j = 0; j < p; ++j)
    w(j) = std::abs(beta(j)) - std::abs(beta(j + p));
  return w;
}

/// Data-dependent threshold: the smallest candidate t with
/// (1 + #{w_j <= -t}) / max(1, #{w_j >= t}) <= q, or +inf when none
/// qualifies. Candidates are the absolute values of the nonzero statistics.
inline double selection_threshold(const Vector& w, double q) {
  require(q > 0.0 && q <= 1.0, "selection_threshold: q must lie in (0, 1]");
  require(w.allFinite(), "selection_threshold: non-finite statistics");
  std::vector<double> candidates;
  candidates.reserve(static_cast<std::size_t>(w.size()));
  for (int j = 0; j < w.size(); ++j)
    if (w(j) != 0.0) candidates.push_back(std::abs(w(j)));
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());
  for (double t : candidates) {
    int neg = 0, pos = 0;
    for (int j = 0; j < w.size(); ++j) {
      if (w(j) <= -t) ++neg;
      if (w(j) >= t) ++pos;
    }
    if (static_cast<double>(1 + neg) / std::max(1, pos) <= q) return t;
  }
  return std::numeric_limits<double>::infinity();
}

inline std::vector<int> select_features(const Vector& w, double q) {
  const double tau = selection_threshold(w, q);
  std::vector<int> selected;
  if (!std::isfinite(tau)) return selected;
  for (int j = 0; j < w.size(); ++j)
    if (w(j) >= tau) selected.push_back(j);
  return selected;
}

struct SelectionScore {
  double fdp = 0.0;
  double power = 0.0;
};

inline SelectionScore evaluate_selection(const std::vector<int>& selected,
                                         const std::vector<bool>& nonnull) {
  int false_hits = 0, true_hits = 0;
  for (int j : selected) {
    require(j >= 0 && j < static_cast<int>(nonnull.size()),
            "evaluate_selection: index out of range");
    if (nonnull[static_cast<std::size_t>(j)]) ++true_hits;
    else ++false_hits;
  }
  const int num_nonnull =
      static_cast<int>(std::count(nonnull.begin(), nonnull.end(), true));
  SelectionScore score;
  score.fdp = static_cast<double>(false_hits) /
              std::max<std::size_t>(1, selected.size());
  score.power =
      static_cast<double>(true_hits) / std::max(1, num_nonnull);
  return score;
}

struct SelectionResult {
  Vector w;
  double tau = std::numeric_limits<double>::infinity();
  double q = 0.1;
  std::vector<int> selected;
  double fdp = 0.0;
  double power = 0.0;
};

/// Full filter pass: ridge on [X, Xtilde] against centered y, contrast
/// statistics, threshold, selection, and scoring against the ground truth.
inline SelectionResult run_filter(const Matrix& x, const Matrix& xtilde,
                                  const Vector& y,
                                  const std::vector<bool>& nonnull, double q,
                                  std::uint64_t fold_seed) {
  require(x.rows() == xtilde.rows() && x.cols() == xtilde.cols(),
          "run_filter: knockoff shape mismatch");
  Matrix design(x.rows(), x.cols() + xtilde.cols());
  design << x, xtilde;
  const Vector centered = y.array() - y.mean();
  const Vector beta =
      fit_ridge(design, centered, default_penalty_grid(), 5, fold_seed);
  SelectionResult result;
  result.w = knockoff_statistics(beta);
  result.q = q;
  result.tau = selection_threshold(result.w, q);
  result.selected = select_features(result.w, q);
  if (!nonnull.empty()) {
    const SelectionScore score = evaluate_selection(result.selected, nonnull);
    result.fdp = score.fdp;
    result.power = score.power;
  }
  return result;
}

}  // namespace knockoff
