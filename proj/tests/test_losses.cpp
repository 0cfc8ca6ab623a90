#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "knockoff/datagen.hpp"
#include "knockoff/losses.hpp"
#include "knockoff/model.hpp"
#include "knockoff/rng.hpp"

using namespace knockoff;

namespace {

std::vector<SwapperState> make_swappers(int k, int p, std::uint64_t seed) {
  std::vector<SwapperState> out;
  for (int i = 0; i < k; ++i)
    out.push_back(make_swapper(p, derive_seed(seed, i)));
  return out;
}

}  // namespace

TEST_CASE("rex penalty is the population variance") {
  CHECK(rex_penalty({1.0, 1.0, 1.0}) == 0.0);
  CHECK(rex_penalty({1.0, 3.0}) == Catch::Approx(1.0));
  CHECK(rex_penalty({0.0, 0.0, 3.0}) == Catch::Approx(2.0));
  CHECK_THROWS_AS(rex_penalty({}), std::invalid_argument);
}

TEST_CASE("swapper decorrelation on constructed weights") {
  const int p = 6;
  std::vector<SwapperState> same = make_swappers(2, p, 5);
  same[1].logits = same[0].logits;
  CHECK(swapper_decorrelation_loss(same) == Catch::Approx(1.0));

  std::vector<SwapperState> anti = same;
  anti[1].logits = -anti[0].logits;
  CHECK(swapper_decorrelation_loss(anti) == Catch::Approx(-1.0));

  std::vector<SwapperState> ortho = same;
  ortho[0].logits.setZero();
  ortho[0].logits(0, 0) = 1.0;
  ortho[1].logits.setZero();
  ortho[1].logits(0, 1) = 1.0;
  CHECK(swapper_decorrelation_loss(ortho) == Catch::Approx(0.0));

  CHECK(swapper_decorrelation_loss(make_swappers(1, p, 7)) == 0.0);

  std::vector<SwapperState> zero = same;
  zero[1].logits.setZero();
  CHECK_THROWS_AS(swapper_decorrelation_loss(zero), DegenerateWeightsError);
}

TEST_CASE("dependency loss endpoints") {
  Rng rng(11);
  const Matrix x = rng.normal_matrix(200, 5);
  ProjectionConfig cfg;
  cfg.seed = 3;
  CHECK(dependency_loss(x, x, 20.0, cfg) == Catch::Approx(20.0));
  CHECK(dependency_loss(x, x, 0.0, cfg) == 0.0);

  // Independent resample: noise floor well below 0.2 * lambda3 at this size.
  Rng rng2(12);
  const Matrix big = rng2.normal_matrix(4000, 8);
  const Matrix resample = oracle_knockoff_independent(big, 13);
  CHECK(dependency_loss(big, resample, 20.0, cfg) < 0.2 * 20.0);
}

TEST_CASE("swap loss vanishes exactly in the degenerate cases") {
  Rng rng(21);
  const int n = 40, p = 5;
  const Matrix x = rng.normal_matrix(n, p);
  LossConfig cfg;
  cfg.num_projections = 32;

  SECTION("identical knockoff makes every swap a no-op") {
    // The relaxed mix (1-b)x + bx re-rounds x at the last ulp, so the
    // squared distances are ~1e-32 rather than exact zeros.
    const StepNoise noise = StepNoise::draw(p, cfg.num_projections, 31);
    const LossBreakdown bd = swap_loss(x, x, make_swappers(2, p, 32), cfg,
                                       noise);
    for (double v : bd.swd_per_swapper) CHECK(v < 1e-20);
    CHECK(bd.rex < 1e-20);
  }

  SECTION("forced-zero indicators make the swap the identity") {
    std::vector<SwapperState> swappers = make_swappers(2, p, 33);
    // Saturate category 0 so the relaxed b is numerically zero.
    for (auto& s : swappers) {
      s.logits.row(0).setConstant(2000.0);
      s.logits.row(1).setConstant(-2000.0);
    }
    const Matrix xt = rng.normal_matrix(n, p);
    const LossBreakdown bd = swap_loss(x, xt, swappers, cfg, 34);
    for (double v : bd.swd_per_swapper) CHECK(v == 0.0);
  }

  SECTION("identical states under shared noise have zero REx") {
    std::vector<SwapperState> swappers = make_swappers(2, p, 35);
    swappers[1].logits = swappers[0].logits;
    const Matrix xt = rng.normal_matrix(n, p);
    const LossBreakdown bd = swap_loss(x, xt, swappers, cfg, 36);
    CHECK(bd.swd_per_swapper[0] == bd.swd_per_swapper[1]);
    CHECK(bd.rex == 0.0);
  }
}

TEST_CASE("total objective bookkeeping recomposes exactly") {
  Rng rng(41);
  const int n = 60, p = 6;
  const Matrix x = rng.normal_matrix(n, p);
  const Matrix xt = rng.normal_matrix(n, p);
  LossConfig cfg;
  cfg.num_projections = 32;
  const std::uint64_t step_seed = 43;
  const StepNoise noise = StepNoise::draw(p, cfg.num_projections, step_seed);
  const LossBreakdown bd = total_objective(x, xt, make_swappers(2, p, 42),
                                           cfg, noise,
                                           derive_seed(step_seed, "dir_swc"));
  CHECK(bd.total ==
        Catch::Approx(bd.swd_mean() + bd.lambda1 * bd.rex +
                      bd.lambda2 * bd.swapper_decor + bd.drl)
            .margin(1e-10));
  CHECK(bd.lambda1 == 30.0);
  CHECK(bd.lambda2 == 1.0);
  CHECK(bd.lambda3 == 20.0);

  LossConfig off;
  off.lambda1 = off.lambda2 = off.lambda3 = 0.0;
  off.num_projections = 32;
  std::vector<SwapperState> one = make_swappers(1, p, 44);
  one[0].logits.row(0).setConstant(2000.0);
  one[0].logits.row(1).setConstant(-2000.0);
  const LossBreakdown zero =
      total_objective(x, xt, one, off, StepNoise::draw(p, 32, 45), 46);
  CHECK(zero.total == 0.0);
}

TEST_CASE("graph objective matches the measurement path") {
  Rng rng(51);
  const int n = 48, p = 5;
  const Matrix x = rng.normal_matrix(n, p);
  const Matrix xt = (0.7 * x + 0.5 * rng.normal_matrix(n, p)).eval();
  LossConfig cfg;
  cfg.num_projections = 24;
  const std::uint64_t step_seed = 53;
  const StepNoise noise = StepNoise::draw(p, cfg.num_projections, step_seed);
  std::vector<SwapperState> swappers = make_swappers(2, p, 52);

  const LossBreakdown direct = total_objective(
      x, xt, swappers, cfg, noise, derive_seed(step_seed, "dir_swc"));

  ad::Tape t;
  ad::Var xt_var = t.constant(xt);
  std::vector<ad::Var> logits;
  for (const auto& s : swappers) logits.push_back(t.param(s.logits));
  const ObjectiveGraph g = build_objective_graph(
      t, x, xt_var, logits, swappers[0].temperature, cfg, noise);

  for (std::size_t i = 0; i < direct.swd_per_swapper.size(); ++i) {
    CHECK(g.values.swd_per_swapper[i] ==
          Catch::Approx(direct.swd_per_swapper[i]).margin(1e-10));
  }
  CHECK(g.values.rex == Catch::Approx(direct.rex).margin(1e-10));
  CHECK(g.values.swapper_decor ==
        Catch::Approx(direct.swapper_decor).margin(1e-10));
  // The graph dependency term is the unclamped ratio; compare against the
  // pre-clamp diagnostic with the same directions.
  ProjectionConfig swc_cfg;
  swc_cfg.num_projections = cfg.num_projections;
  swc_cfg.order = cfg.order;
  swc_cfg.seed = derive_seed(step_seed, "dir_swc");
  SwcDiagnostics diag;
  sliced_wasserstein_correlation(x, xt, swc_cfg, &diag);
  CHECK(g.values.drl ==
        Catch::Approx(cfg.lambda3 * diag.pre_clamp).margin(1e-9));
  CHECK(g.values.total - g.values.drl ==
        Catch::Approx(direct.total - direct.drl).margin(1e-9));
}

TEST_CASE("replacing the knockoff by the sample raises the dependency loss") {
  ProjectionConfig cfg;
  int holds = 0;
  const int kSeeds = 20;
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(derive_seed(61, s));
    const Matrix x = rng.normal_matrix(500, 6);
    const Matrix independent =
        oracle_knockoff_independent(x, derive_seed(62, s));
    ProjectionConfig pc = cfg;
    pc.seed = derive_seed(63, s);
    if (dependency_loss(x, x, 20.0, pc) >
        dependency_loss(x, independent, 20.0, pc))
      ++holds;
  }
  CHECK(holds == kSeeds);
}

TEST_CASE("the adversarial game is live: nonzero gradients on both sides") {
  Rng rng(71);
  const int n = 32, p = 6;
  const Matrix x = rng.normal_matrix(n, p);
  const Matrix z = rng.uniform_matrix(n, p);
  KnockoffNetConfig net_cfg;
  net_cfg.num_layers = 2;
  net_cfg.num_heads = 2;
  net_cfg.hidden_dim = 16;
  net_cfg.mlp_ratio = 2;
  KnockoffNet net(p, net_cfg, 72);
  std::vector<SwapperState> swappers = make_swappers(2, p, 73);
  LossConfig cfg;
  cfg.num_projections = 16;
  const StepNoise noise = StepNoise::draw(p, cfg.num_projections, 74);

  ad::Tape t;
  std::vector<ad::Var> params;
  ad::Var xt = net.forward_graph(t, x, z, false, nullptr, &params);
  std::vector<ad::Var> logits;
  for (const auto& s : swappers) logits.push_back(t.param(s.logits));
  const ObjectiveGraph g = build_objective_graph(
      t, x, xt, logits, swappers[0].temperature, cfg, noise);

  t.backward(g.total);
  double gen_norm = 0.0;
  for (const ad::Var& v : params) gen_norm += t.grad(v).squaredNorm();
  CHECK(std::sqrt(gen_norm) > 1e-8);

  t.backward(g.swap_loss_full);
  double swapper_norm = 0.0;
  for (const ad::Var& v : logits) swapper_norm += t.grad(v).squaredNorm();
  CHECK(std::sqrt(swapper_norm) > 1e-8);
}

TEST_CASE("loss terms respect their sign ranges") {
  Rng rng(81);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 30 + 2 * trial, p = 4;
    const Matrix x = rng.normal_matrix(n, p);
    const Matrix xt = rng.normal_matrix(n, p);
    LossConfig cfg;
    cfg.num_projections = 16;
    const LossBreakdown bd =
        total_objective(x, xt, make_swappers(3, p, derive_seed(82, trial)),
                        cfg, StepNoise::draw(p, 16, derive_seed(83, trial)),
                        derive_seed(84, trial));
    for (double v : bd.swd_per_swapper) CHECK(v >= 0.0);
    CHECK(bd.rex >= 0.0);
    CHECK(bd.swapper_decor >= -1.0);
    CHECK(bd.swapper_decor <= 1.0);
    CHECK(bd.drl >= 0.0);
    CHECK(std::isfinite(bd.total));
  }
}
