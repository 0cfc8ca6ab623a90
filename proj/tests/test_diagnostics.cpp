#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "knockoff/datagen.hpp"
#include "knockoff/diagnostics.hpp"
#include "knockoff/filter.hpp"
#include "knockoff/rng.hpp"

using namespace knockoff;

TEST_CASE("identical pair scores zero on every metric and ratio") {
  Rng rng(3);
  const Matrix x = rng.normal_matrix(100, 6);
  const SwapMetricReport r = swap_property_suite(x, x, 7, 32);
  for (std::size_t k = 0; k < r.ratios.size(); ++k) {
    CHECK(r.mmd[k] == 0.0);
    CHECK(r.swd1[k] == 0.0);
    CHECK(r.swd2[k] == 0.0);
  }
  CHECK(r.mmd_average() == 0.0);
}

TEST_CASE("zero swap ratio is a no-op") {
  Rng rng(5);
  const Matrix x = rng.normal_matrix(60, 5);
  const Matrix xt = rng.normal_matrix(60, 5);
  const SwapMetricValues v = swap_metrics_at_ratio(x, xt, 0.0, 9, 32);
  CHECK(v.mmd == 0.0);
  CHECK(v.swd1 == 0.0);
  CHECK(v.swd2 == 0.0);
}

TEST_CASE("per-ratio values are deterministic given the seed") {
  Rng rng(11);
  const Matrix x = rng.normal_matrix(80, 7);
  const Matrix xt = rng.normal_matrix(80, 7);
  const SwapMetricReport a = swap_property_suite(x, xt, 13, 32);
  const SwapMetricReport b = swap_property_suite(x, xt, 13, 32);
  CHECK(a.swd1 == b.swd1);
  CHECK(a.swd2 == b.swd2);
  CHECK(a.mmd == b.mmd);
  const SwapMetricReport c = swap_property_suite(x, xt, 14, 32);
  CHECK(a.swd1 != c.swd1);
}

TEST_CASE("oracle knockoffs stay under the resampling-noise baseline") {
  const int n = 2000, p = 8;
  Rng rng(17);
  const Matrix x = rng.normal_matrix(n, p);
  const Matrix xt = oracle_knockoff_independent(x, 18);
  const SwapMetricReport r = swap_property_suite(x, xt, 19);

  // Baseline: the same averaged SWD1 between the pair and a completely fresh
  // draw, i.e. pure resampling noise.
  const Matrix x2 = rng.normal_matrix(n, p);
  const Matrix xt2 = oracle_knockoff_independent(x2, 20);
  Matrix pair(n, 2 * p), fresh(n, 2 * p);
  pair << x, xt;
  fresh << x2, xt2;
  ProjectionConfig cfg;
  cfg.order = 1;
  cfg.seed = 21;
  const double baseline = sliced_wasserstein_distance(pair, fresh, cfg);
  CHECK(r.swd1_average() < 2.0 * baseline);
}

TEST_CASE("swap ratio subset size rounds to the nearest with a floor of one") {
  Rng rng(23);
  const Matrix x = rng.normal_matrix(40, 10);
  const Matrix xt = rng.normal_matrix(40, 10);
  // 0.04 * 10 rounds to 0 but at least one coordinate must be swapped.
  const SwapMetricValues v = swap_metrics_at_ratio(x, xt, 0.04, 25, 16);
  CHECK(v.swd1 > 0.0);
}

TEST_CASE("statistic summary pools by class") {
  Vector w(2);
  w << 2.0, -1.0;
  const StatisticSummary s =
      statistic_distribution_summary({w}, {true, false});
  REQUIRE(s.nonnulls.has_value());
  REQUIRE(s.nulls.has_value());
  CHECK(s.nonnulls->mean == 2.0);
  CHECK(s.nonnulls->stddev == 0.0);
  CHECK(s.nulls->mean == -1.0);
  CHECK(s.nulls->stddev == 0.0);
  CHECK(s.nonnulls->count == 1);
}

TEST_CASE("symmetric null statistics average out") {
  Rng rng(31);
  const double a = 0.7;
  std::vector<Vector> trials;
  for (int t = 0; t < 10000; ++t) {
    Vector w(1);
    w(0) = rng.uniform() < 0.5 ? a : -a;
    trials.push_back(w);
  }
  const StatisticSummary s =
      statistic_distribution_summary(trials, {false});
  REQUIRE(s.nulls.has_value());
  CHECK_FALSE(s.nonnulls.has_value());
  CHECK(std::abs(s.nulls->mean) < 3.0 * a / 100.0);
}

TEST_CASE("all-null mask leaves the nonnull summary absent, not zero") {
  Vector w(3);
  w << 1.0, 2.0, 3.0;
  const StatisticSummary s =
      statistic_distribution_summary({w}, {false, false, false});
  CHECK_FALSE(s.nonnulls.has_value());
  REQUIRE(s.nulls.has_value());
  CHECK(s.nulls->count == 3);
  CHECK(s.nulls->mean == Catch::Approx(2.0));
}

TEST_CASE("healthy oracle pipeline keeps null statistics near zero") {
  // Pooled over seeded trials with the permutation oracle on its validity
  // domain (independent columns): the null mean must sit an order of
  // magnitude below the nonnull mean.
  std::vector<Vector> trials;
  std::vector<bool> nonnull;
  const int kTrials = 10;
  for (int t = 0; t < kTrials; ++t) {
    Rng rng(derive_seed(41, t));
    const int n = 400, p = 20;
    const Matrix raw = rng.normal_matrix(n, p);
    CoefficientSpec cs;
    cs.num_nonnull = 6;
    cs.scale_divisor = 5.0;
    const Coefficients coef =
        sample_coefficients(cs, n, p, derive_seed(43, 0));  // shared mask
    if (t == 0) nonnull = coef.nonnull;
    const Vector y =
        synthesize_linear_response(raw, coef.beta, derive_seed(44, t));
    const Matrix x = standardize_columns(raw);
    const Matrix xt = oracle_knockoff_independent(x, derive_seed(45, t));
    // Ridge-based statistics through the filter path.
    Matrix design(n, 2 * p);
    design << x, xt;
    const Vector centered = y.array() - y.mean();
    const Vector beta = fit_ridge(design, centered, default_penalty_grid(), 5,
                                  derive_seed(46, t));
    trials.push_back(knockoff_statistics(beta));
  }
  const StatisticSummary s = statistic_distribution_summary(trials, nonnull);
  REQUIRE(s.nulls.has_value());
  REQUIRE(s.nonnulls.has_value());
  CHECK(std::abs(s.nulls->mean) <= 0.1 * s.nonnulls->mean);
}
