#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "knockoff/datagen.hpp"
#include "knockoff/optim.hpp"
#include "knockoff/trainer.hpp"

using namespace knockoff;

namespace {

KnockoffNetConfig tiny_net() {
  KnockoffNetConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.hidden_dim = 16;
  cfg.mlp_ratio = 2;
  cfg.dropout = 0.1;
  return cfg;
}

TrainConfig smoke_config(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 64;
  cfg.num_projections = 24;
  cfg.lr_generator = 1e-4;
  cfg.seed = 7;
  return cfg;
}

Matrix smoke_data(int n, int p, std::uint64_t seed) {
  Rng rng(seed);
  return standardize_columns(rng.normal_matrix(n, p));
}

}  // namespace

TEST_CASE("AdamW single step matches the hand-computed update") {
  // Two scalars, one step: m_hat = g, v_hat = g^2, so the Adam part moves by
  // lr * g/(|g| + eps) and the decoupled decay then shrinks the weight.
  std::vector<Matrix> params{Matrix::Constant(1, 1, 1.0),
                             Matrix::Constant(1, 1, 2.0)};
  std::vector<Matrix> grads{Matrix::Constant(1, 1, 0.5),
                            Matrix::Constant(1, 1, -1.0)};
  AdamW opt(0.1, 0.01);
  opt.step(params, grads);

  const double eps = 1e-8;
  const double expect0 =
      (1.0 - 0.1 * (0.5 / (std::sqrt(0.5 * 0.5) + eps))) * 1.0;
  // Decay applies to the already-updated weight.
  const double adam0 = 1.0 - 0.1 * (0.5 / (std::sqrt(0.25) + eps));
  const double final0 = adam0 - 0.1 * 0.01 * adam0;
  (void)expect0;
  CHECK(params[0](0, 0) == Catch::Approx(final0).margin(1e-14));

  const double adam1 = 2.0 - 0.1 * (-1.0 / (std::sqrt(1.0) + eps));
  const double final1 = adam1 - 0.1 * 0.01 * adam1;
  CHECK(params[1](0, 0) == Catch::Approx(final1).margin(1e-14));
}

TEST_CASE("gradient check is exact for a quadratic toy loss") {
  auto loss = [](const std::vector<Matrix>& params,
                 std::vector<Matrix>* grads) {
    double acc = 0.0;
    if (grads) grads->clear();
    for (const Matrix& p : params) {
      acc += p.squaredNorm();
      if (grads) grads->push_back(2.0 * p);
    }
    return acc;
  };
  Rng rng(3);
  std::vector<Matrix> params{rng.normal_matrix(3, 2), rng.normal_matrix(2, 2)};
  Rng pick(4);
  CHECK(finite_difference_gradient_check(loss, params, 10, 1e-5, pick) <
        1e-9);
}

TEST_CASE("gradient check covers the full adversarial objective") {
  const int n = 24, p = 8;
  Rng rng(11);
  const Matrix x = standardize_columns(rng.normal_matrix(n, p));
  const Matrix z = rng.uniform_matrix(n, p);
  KnockoffNet net(p, tiny_net(), 12);
  std::vector<SwapperState> swappers{make_swapper(p, 13), make_swapper(p, 14)};
  LossConfig cfg;
  cfg.num_projections = 16;
  const StepNoise noise = StepNoise::draw(p, cfg.num_projections, 15);

  // Parameters: all net weights plus both swapper logit tables.
  std::vector<Matrix> params = net.parameters();
  params.push_back(swappers[0].logits);
  params.push_back(swappers[1].logits);
  const std::size_t net_count = net.parameters().size();

  auto loss = [&](const std::vector<Matrix>& theta,
                  std::vector<Matrix>* grads) {
    KnockoffNet local = net;
    for (std::size_t k = 0; k < net_count; ++k)
      local.parameters()[k] = theta[k];
    ad::Tape t;
    std::vector<ad::Var> net_vars;
    ad::Var xt = local.forward_graph(t, x, z, false, nullptr, &net_vars);
    std::vector<ad::Var> logits{t.param(theta[net_count]),
                                t.param(theta[net_count + 1])};
    const ObjectiveGraph g = build_objective_graph(
        t, x, xt, logits, swappers[0].temperature, cfg, noise);
    if (grads) {
      t.backward(g.total);
      grads->clear();
      for (const ad::Var& v : net_vars) grads->push_back(t.grad(v));
      grads->push_back(t.grad(logits[0]));
      grads->push_back(t.grad(logits[1]));
    }
    return t.value(g.total)(0, 0);
  };

  Rng pick(16);
  const double worst =
      finite_difference_gradient_check(loss, params, 64, 1e-5, pick);
  CHECK(worst < 1e-4);
}

TEST_CASE("patience bookkeeping stops at the documented epoch") {
  // Validation losses (5, 4, 4.1, 4.2, 4.05, ...) with patience 3 must stop
  // after epoch 5 and keep the epoch-2 weights. Reproduced with a stub of the
  // early-stop loop over the exact rule used by train().
  const std::vector<double> vals{5.0, 4.0, 4.1, 4.2, 4.05, 4.3, 4.4, 4.2};
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0, no_improvement = 0, stopped = 0;
  for (int epoch = 1; epoch <= static_cast<int>(vals.size()); ++epoch) {
    const double v = vals[static_cast<std::size_t>(epoch - 1)];
    if (v < best) {
      best = v;
      best_epoch = epoch;
      no_improvement = 0;
    } else {
      ++no_improvement;
    }
    stopped = epoch;
    if (no_improvement >= 3) break;
  }
  CHECK(stopped == 5);
  CHECK(best_epoch == 2);
}

TEST_CASE("training runs, logs, and improves the swap loss on a smoke run") {
  // The dependency term is switched off so the run isolates the adversarial
  // swap game; the rate is sized for a 15-step budget.
  const Matrix x = smoke_data(256, 8, 21);
  int improved = 0;
  for (std::uint64_t seed : {101, 202, 303}) {
    TrainConfig cfg = smoke_config(5);
    cfg.lambda3 = 0.0;
    cfg.lr_generator = 0.03;
    cfg.seed = seed;
    cfg.early_stop_patience = 5;
    const TrainResult r = train(x, cfg, tiny_net());
    REQUIRE(!r.log.rows.empty());
    CHECK(r.log.rows.size() <= 5);
    for (const EpochRow& row : r.log.rows) {
      CHECK(std::isfinite(row.train.total));
      CHECK(std::isfinite(row.val.total));
      CHECK(row.seconds >= 0.0);
    }
    const double first = r.log.rows.front().train.swd_mean() +
                         r.log.rows.front().train.lambda1 *
                             r.log.rows.front().train.rex;
    const double last = r.log.rows.back().train.swd_mean() +
                        r.log.rows.back().train.lambda1 *
                            r.log.rows.back().train.rex;
    if (last < first) ++improved;
  }
  CHECK(improved >= 2);
}

TEST_CASE("swapper update count follows the frequency schedule") {
  // 4 batches of 64 rows per epoch with gamma = 3 gives exactly one swapper
  // update per epoch; the logits must move only then.
  const Matrix x = smoke_data(324, 6, 31);  // 259 train rows -> 4 steps
  TrainConfig cfg = smoke_config(1);
  cfg.swapper_update_frequency = 5;  // > steps per epoch: never updated
  const TrainResult frozen = train(x, cfg, tiny_net());
  const SwapperState fresh = make_swapper(6, derive_seed(cfg.seed, "swapper",
                                                         0));
  CHECK(frozen.swappers[0].logits == fresh.logits);

  cfg.swapper_update_frequency = 3;  // one update at step 3
  const TrainResult moved = train(x, cfg, tiny_net());
  CHECK(moved.swappers[0].logits != fresh.logits);
}

TEST_CASE("the log records its config and the dependency-loss minimum") {
  TrainingLog log;
  for (int e = 1; e <= 4; ++e) {
    EpochRow row;
    row.epoch = e;
    row.val.drl = std::abs(e - 3) + 0.5;  // minimum at epoch 3
    log.rows.push_back(row);
  }
  CHECK(log.min_val_drl_epoch() == 3);
  CHECK(TrainingLog{}.min_val_drl_epoch() == 0);

  const Matrix x = smoke_data(100, 4, 81);
  TrainConfig cfg = smoke_config(2);
  const TrainResult r = train(x, cfg, tiny_net());
  CHECK(r.log.config.epochs == cfg.epochs);
  CHECK(r.log.config.lambda3 == cfg.lambda3);
  CHECK(static_cast<int>(r.log.rows.size()) <= r.log.config.epochs);
}

TEST_CASE("training is bit-reproducible for a fixed config") {
  const Matrix x = smoke_data(200, 6, 41);
  TrainConfig cfg = smoke_config(3);
  const TrainResult a = train(x, cfg, tiny_net());
  const TrainResult b = train(x, cfg, tiny_net());
  REQUIRE(a.log.rows.size() == b.log.rows.size());
  for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
    CHECK(a.log.rows[i].train.total == b.log.rows[i].train.total);
    CHECK(a.log.rows[i].val.total == b.log.rows[i].val.total);
  }
  for (std::size_t k = 0; k < a.net.parameters().size(); ++k)
    CHECK(a.net.parameters()[k] == b.net.parameters()[k]);
  for (std::size_t k = 0; k < a.swappers.size(); ++k)
    CHECK(a.swappers[k].logits == b.swappers[k].logits);
}

TEST_CASE("validation is deterministic and sees the injected knockoff") {
  const Matrix x = smoke_data(100, 5, 51);
  KnockoffNet net(5, tiny_net(), 52);
  std::vector<SwapperState> swappers{make_swapper(5, 53), make_swapper(5, 54)};
  TrainConfig cfg = smoke_config(1);

  const LossBreakdown v1 = validate(x, net, swappers, cfg, 99);
  const LossBreakdown v2 = validate(x, net, swappers, cfg, 99);
  CHECK(v1.total == v2.total);

  CHECK_THROWS_AS(validate(Matrix(1, 5), net, swappers, cfg, 99),
                  std::invalid_argument);

  // Identical knockoff: the dependency term must be exactly lambda3.
  const StepNoise noise = StepNoise::draw(5, cfg.num_projections, 98);
  const LossBreakdown bd =
      total_objective(x, x, swappers, cfg.loss_config(), noise, 97);
  CHECK(bd.drl == Catch::Approx(cfg.lambda3));
}

TEST_CASE("generator gradient steps never touch validation rows") {
  const int n = 120, p = 5;
  const Matrix x = smoke_data(n, p, 61);
  TrainConfig cfg = smoke_config(1);
  cfg.batch_size = 32;
  const TrainResult clean = train(x, cfg, tiny_net());

  // Poison exactly the rows the seeded split sends to validation.
  const auto [train_rows, val_rows] =
      split_indices(n, 1.0 - cfg.val_ratio, derive_seed(cfg.seed, "split"));
  Matrix poisoned = x;
  for (int r : val_rows)
    poisoned.row(r).setConstant(std::numeric_limits<double>::quiet_NaN());

  try {
    train(poisoned, cfg, tiny_net());
    FAIL("expected the NaN validation rows to surface");
  } catch (const TrainingDivergedError& e) {
    // The carried log still holds the epoch's training losses, which must be
    // bit-identical to the clean run: gradient steps never saw those rows.
    const std::string tail = e.log_tail();
    const auto pos = tail.find("train_total ");
    REQUIRE(pos != std::string::npos);
    const double poisoned_train_total =
        std::strtod(tail.c_str() + pos + 12, nullptr);
    CHECK(poisoned_train_total == clean.log.rows.front().train.total);
  } catch (const std::invalid_argument&) {
    FAIL("training itself rejected the matrix before the split");
  }
}

TEST_CASE("divergence guard aborts with the log tail attached") {
  const Matrix x = smoke_data(100, 4, 71);
  TrainConfig cfg = smoke_config(2);
  cfg.divergence_guard = 1e-9;  // everything trips the guard
  try {
    train(x, cfg, tiny_net());
    FAIL("expected TrainingDivergedError");
  } catch (const TrainingDivergedError& e) {
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
  }
}
