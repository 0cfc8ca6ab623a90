#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "knockoff/common.hpp"
#include "knockoff/rng.hpp"
#include "knockoff/sw_metrics.hpp"

namespace knockoff {

/// Sample-level swap-property measurements over a ladder of swap ratios. For
/// each ratio a uniformly drawn subset of round(r*p) coordinates (at least
/// one) is hard-swapped and the pair is compared against the swapped pair as
/// 2p-dimensional samples.
struct SwapMetricReport {
  std::vector<double> ratios{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> mmd;   // MMD(Linear) per ratio
  std::vector<double> swd1;  // order-1 sliced distance per ratio
  std::vector<double> swd2;  // order-2 power sliced distance per ratio
  std::uint64_t seed = 0;

  double mmd_average() const { return average(mmd); }
  double swd1_average() const { return average(swd1); }
  double swd2_average() const { return average(swd2); }

 private:
  static double average(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
  }
};

struct SwapMetricValues {
  double mmd = 0.0;
  double swd1 = 0.0;
  double swd2 = 0.0;
};

/// One swap-property measurement at a single ratio.
inline SwapMetricValues swap_metrics_at_ratio(const Matrix& x,
                                              const Matrix& xtilde,
                                              double ratio,
                                              std::uint64_t seed,
                                              int num_projections = 128) {
  require(x.rows() == xtilde.rows() && x.cols() == xtilde.cols(),
          "swap_metrics_at_ratio: shape mismatch");
  require(ratio >= 0.0 && ratio <= 1.0, "swap_metrics_at_ratio: ratio");
  const int p = static_cast<int>(x.cols());

  Matrix pair(x.rows(), 2 * p);
  pair << x, xtilde;
  Matrix swapped = pair;
  if (ratio > 0.0) {
    const int size = std::max(
        1, static_cast<int>(std::llround(ratio * static_cast<double>(p))));
    Rng rng(seed);
    for (int j : rng.sample_without_replacement(p, size))
      swapped.col(j).swap(swapped.col(j + p));
  }

  SwapMetricValues out;
  out.mmd = mmd_linear(pair, swapped);
  ProjectionConfig cfg;
  cfg.num_projections = num_projections;
  cfg.order = 1;
  cfg.seed = derive_seed(seed, "swd1");
  out.swd1 = sliced_wasserstein_distance(pair, swapped, cfg);
  cfg.order = 2;
  cfg.seed = derive_seed(seed, "swd2");
  out.swd2 = sliced_wasserstein_power(pair, swapped, cfg);
  return out;
}

inline SwapMetricReport swap_property_suite(const Matrix& x,
                                            const Matrix& xtilde,
                                            std::uint64_t seed,
                                            int num_projections = 128) {
  SwapMetricReport report;
  report.seed = seed;
  for (std::size_t k = 0; k < report.ratios.size(); ++k) {
    const SwapMetricValues v = swap_metrics_at_ratio(
        x, xtilde, report.ratios[k], derive_seed(seed, "ratio", k),
        num_projections);
    report.mmd.push_back(v.mmd);
    report.swd1.push_back(v.swd1);
    report.swd2.push_back(v.swd2);
  }
  return report;
}

struct ClassSummary {
  double mean = 0.0;
  double stddev = 0.0;
  long count = 0;
};

/// Null/nonnull statistics pooled across trials. A class absent from the mask
/// yields an empty optional rather than zeros.
struct StatisticSummary {
  std::optional<ClassSummary> nulls;
  std::optional<ClassSummary> nonnulls;
};

inline StatisticSummary statistic_distribution_summary(
    const std::vector<Vector>& w_trials, const std::vector<bool>& nonnull) {
  require(!w_trials.empty(), "statistic_distribution_summary: no trials");
  const int p = static_cast<int>(nonnull.size());
  std::vector<double> null_pool, nonnull_pool;
  for (const Vector& w : w_trials) {
    require(w.size() == p, "statistic_distribution_summary: length mismatch");
    for (int j = 0; j < p; ++j) {
      (nonnull[static_cast<std::size_t>(j)] ? nonnull_pool : null_pool)
          .push_back(w(j));
    }
  }
  auto summarize = [](const std::vector<double>& pool)
      -> std::optional<ClassSummary> {
    if (pool.empty()) return std::nullopt;
    ClassSummary s;
    s.count = static_cast<long>(pool.size());
    for (double v : pool) s.mean += v;
    s.mean /= static_cast<double>(pool.size());
    for (double v : pool) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(pool.size()));
    return s;
  };
  StatisticSummary out;
  out.nulls = summarize(null_pool);
  out.nonnulls = summarize(nonnull_pool);
  return out;
}

}  // namespace knockoff
