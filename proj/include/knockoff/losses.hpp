#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "knockoff/ad.hpp"
#include "knockoff/common.hpp"
#include "knockoff/model.hpp"
#include "knockoff/rng.hpp"
#include "knockoff/sw_metrics.hpp"

namespace knockoff {

struct LossConfig {
  double lambda1 = 30.0;
  double lambda2 = 1.0;
  double lambda3 = 20.0;
  int num_projections = 128;
  int order = 2;
  /// Whether the swappers' ascent objective includes the REx and
  /// decorrelation terms (the full swap-loss brace) or only the SWD mean.
  bool swapper_sees_regularizers = true;
};

struct LossBreakdown {
  std::vector<double> swd_per_swapper;
  double rex = 0.0;
  double swapper_decor = 0.0;
  double drl = 0.0;
  double total = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda3 = 0.0;

  double swd_mean() const {
    double acc = 0.0;
    for (double v : swd_per_swapper) acc += v;
    return swd_per_swapper.empty()
               ? 0.0
               : acc / static_cast<double>(swd_per_swapper.size());
  }
  double swap_loss() const {
    return swd_mean() + lambda1 * rex + lambda2 * swapper_decor;
  }
  double recompose() const { return swap_loss() + drl; }
};

/// Population variance of the per-swapper distances.
inline double rex_penalty(const std::vector<double>& swd_values) {
  require(!swd_values.empty(), "rex_penalty: need at least one value");
  double mean = 0.0;
  for (double v : swd_values) mean += v;
  mean /= static_cast<double>(swd_values.size());
  double var = 0.0;
  for (double v : swd_values) var += (v - mean) * (v - mean);
  return var / static_cast<double>(swd_values.size());
}

/// Mean pairwise cosine similarity of the flattened swapper logit tables over
/// ordered pairs (i, j), i != j. Zero for a single swapper.
inline double swapper_decorrelation_loss(
    const std::vector<SwapperState>& swappers) {
  if (swappers.size() < 2) return 0.0;
  std::vector<double> norms;
  for (const SwapperState& s : swappers) {
    const double n = s.logits.norm();
    if (n <= 0.0) {
      throw DegenerateWeightsError(
          "swapper_decorrelation_loss: zero-norm swapper weights");
    }
    norms.push_back(n);
  }
  double acc = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < swappers.size(); ++i) {
    for (std::size_t j = 0; j < swappers.size(); ++j) {
      if (i == j) continue;
      acc += swappers[i].logits.cwiseProduct(swappers[j].logits).sum() /
             (norms[i] * norms[j]);
      ++count;
    }
  }
  return acc / count;
}

/// lambda3-scaled sliced Wasserstein correlation between the sample and its
/// knockoff.
inline double dependency_loss(const Matrix& x, const Matrix& xtilde,
                              double lambda3, const ProjectionConfig& cfg) {
  if (lambda3 == 0.0) return 0.0;
  return lambda3 * sliced_wasserstein_correlation(x, xtilde, cfg);
}

/// Noise for one optimization step, shared by the generator and swapper
/// objectives: one Gumbel table reused by every swapper and one direction set
/// per distance estimator. Identical swapper states therefore produce
/// identical distances (zero REx), as the construction intends.
struct StepNoise {
  Matrix gumbel;    // 2 x p
  Matrix dir_swap;  // 2p x L, for the swap-loss distances
  Matrix dir_swc;   // 2p x L, for the dependency term

  static StepNoise draw(int p, int num_projections, std::uint64_t seed) {
    StepNoise noise;
    Rng grng(derive_seed(seed, "gumbel"));
    noise.gumbel = grng.gumbel_matrix(2, p);
    noise.dir_swap = sample_unit_directions(2 * p, num_projections,
                                            derive_seed(seed, "dir_swap"));
    noise.dir_swc = sample_unit_directions(2 * p, num_projections,
                                           derive_seed(seed, "dir_swc"));
    return noise;
  }
};

/// Swap loss (measurement path): for each swapper a relaxed indicator is
/// drawn, the concatenated pair is convexly swapped, and the power-mean SWD
/// between the pair and its swap is computed; the mean is regularized by the
/// REx variance and the swapper decorrelation.
inline LossBreakdown swap_loss(const Matrix& x, const Matrix& xtilde,
                               const std::vector<SwapperState>& swappers,
                               const LossConfig& cfg, const StepNoise& noise) {
  require(!swappers.empty(), "swap_loss: need at least one swapper");
  require(x.rows() == xtilde.rows() && x.cols() == xtilde.cols(),
          "swap_loss: shape mismatch");
  const int p = static_cast<int>(x.cols());
  require(noise.gumbel.cols() == p, "swap_loss: noise width mismatch");

  Matrix pair(x.rows(), 2 * p);
  pair << x, xtilde;

  LossBreakdown bd;
  bd.lambda1 = cfg.lambda1;
  bd.lambda2 = cfg.lambda2;
  bd.lambda3 = cfg.lambda3;
  for (const SwapperState& s : swappers) {
    s.validate();
    Vector b(p);
    for (int j = 0; j < p; ++j) {
      const double z = ((s.logits(1, j) + noise.gumbel(1, j)) -
                        (s.logits(0, j) + noise.gumbel(0, j))) /
                       s.temperature;
      b(j) = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                      : std::exp(z) / (1.0 + std::exp(z));
    }
    const auto [x_sw, xt_sw] = apply_swap(x, xtilde, b);
    Matrix swapped(x.rows(), 2 * p);
    swapped << x_sw, xt_sw;
    bd.swd_per_swapper.push_back(
        detail::swd_with_directions(pair, swapped, noise.dir_swap, cfg.order,
                                    true));
  }
  bd.rex = rex_penalty(bd.swd_per_swapper);
  bd.swapper_decor = swapper_decorrelation_loss(swappers);
  bd.total = bd.swap_loss();
  return bd;
}

inline LossBreakdown swap_loss(const Matrix& x, const Matrix& xtilde,
                               const std::vector<SwapperState>& swappers,
                               const LossConfig& cfg, std::uint64_t seed) {
  return swap_loss(x, xtilde, swappers, cfg,
                   StepNoise::draw(static_cast<int>(x.cols()),
                                   cfg.num_projections, seed));
}

/// Full training objective (measurement path): swap loss plus dependency
/// regularization. Rows are truncated to an even count for the correlation
/// estimator.
inline LossBreakdown total_objective(const Matrix& x, const Matrix& xtilde,
                                     const std::vector<SwapperState>& swappers,
                                     const LossConfig& cfg,
                                     const StepNoise& noise,
                                     std::uint64_t swc_seed) {
  LossBreakdown bd = swap_loss(x, xtilde, swappers, cfg, noise);
  if (cfg.lambda3 != 0.0) {
    const Eigen::Index even_rows = x.rows() - (x.rows() % 2);
    ProjectionConfig pc;
    pc.num_projections = cfg.num_projections;
    pc.order = cfg.order;
    pc.seed = swc_seed;
    bd.drl = dependency_loss(x.topRows(even_rows), xtilde.topRows(even_rows),
                             cfg.lambda3, pc);
  }
  bd.total = bd.recompose();
  return bd;
}

struct ObjectiveGraph {
  ad::Var total;              // generator objective: swap loss + DRL
  ad::Var swap_loss_full;     // SWD mean + lambda1 REx + lambda2 decor
  ad::Var swd_mean;
  std::vector<ad::Var> swd_per_swapper;
  ad::Var rex;
  ad::Var decor;              // invalid when K == 1
  ad::Var drl;                // invalid when lambda3 == 0
  LossBreakdown values;       // numeric snapshot of all components
};

/// Differentiable total objective. `xtilde` is the generator output var;
/// swapper logits enter as vars so the same builder serves both sides of the
/// adversarial game.
inline ObjectiveGraph build_objective_graph(
    ad::Tape& t, const Matrix& x, ad::Var xtilde,
    const std::vector<ad::Var>& swapper_logits, double temperature,
    const LossConfig& cfg, const StepNoise& noise) {
  require(!swapper_logits.empty(), "build_objective_graph: no swappers");
  require(t.value(xtilde).rows() == x.rows() &&
              t.value(xtilde).cols() == x.cols(),
          "build_objective_graph: knockoff shape mismatch");
  const int p = static_cast<int>(x.cols());
  (void)p;
  ObjectiveGraph g;
  ad::Var xv = t.constant(x);
  ad::Var pair = t.concat_cols(xv, xtilde);

  for (const ad::Var& logits : swapper_logits) {
    ad::Var b = swapper_sample_graph(t, logits, noise.gumbel, temperature);
    const auto [x_sw, xt_sw] = apply_swap_graph(t, xv, xtilde, b);
    ad::Var swapped = t.concat_cols(x_sw, xt_sw);
    g.swd_per_swapper.push_back(
        ad::sliced_wasserstein_power_graph(t, pair, swapped, noise.dir_swap,
                                           cfg.order));
  }

  ad::Var sum = g.swd_per_swapper[0];
  for (std::size_t i = 1; i < g.swd_per_swapper.size(); ++i)
    sum = t.add(sum, g.swd_per_swapper[i]);
  g.swd_mean =
      t.scale(sum, 1.0 / static_cast<double>(g.swd_per_swapper.size()));
  g.rex = ad::scalar_variance(t, g.swd_per_swapper);

  ad::Var brace = t.add(g.swd_mean, t.scale(g.rex, cfg.lambda1));
  if (swapper_logits.size() >= 2) {
    ad::Var acc{};
    int count = 0;
    for (std::size_t i = 0; i < swapper_logits.size(); ++i) {
      for (std::size_t j = i + 1; j < swapper_logits.size(); ++j) {
        ad::Var c = ad::cosine_similarity(t, swapper_logits[i],
                                          swapper_logits[j]);
        acc = acc.valid() ? t.add(acc, c) : c;
        count += 2;  // ordered pairs (i,j) and (j,i) share one cosine
      }
    }
    g.decor = t.scale(acc, 2.0 / static_cast<double>(count));
    brace = t.add(brace, t.scale(g.decor, cfg.lambda2));
  }
  g.swap_loss_full = brace;

  g.total = brace;
  if (cfg.lambda3 != 0.0) {
    const int rows = static_cast<int>(x.rows());
    const int even_rows = rows - rows % 2;
    ad::Var xe = even_rows == rows ? xv : t.slice_rows(xv, 0, even_rows);
    ad::Var xte =
        even_rows == rows ? xtilde : t.slice_rows(xtilde, 0, even_rows);
    ad::Var swc = ad::sliced_wasserstein_correlation_graph(t, xe, xte,
                                                           noise.dir_swc,
                                                           cfg.order);
    g.drl = t.scale(swc, cfg.lambda3);
    g.total = t.add(g.total, g.drl);
  }

  g.values.lambda1 = cfg.lambda1;
  g.values.lambda2 = cfg.lambda2;
  g.values.lambda3 = cfg.lambda3;
  for (const ad::Var& v : g.swd_per_swapper)
    g.values.swd_per_swapper.push_back(t.value(v)(0, 0));
  g.values.rex = t.value(g.rex)(0, 0);
  g.values.swapper_decor = g.decor.valid() ? t.value(g.decor)(0, 0) : 0.0;
  g.values.drl = g.drl.valid() ? t.value(g.drl)(0, 0) : 0.0;
  g.values.total = t.value(g.total)(0, 0);
  return g;
}

}  // namespace knockoff
