#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "knockoff/model.hpp"
#include "knockoff/rng.hpp"

using namespace knockoff;

namespace {

KnockoffNetConfig tiny_config() {
  KnockoffNetConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.hidden_dim = 16;
  cfg.mlp_ratio = 2;
  return cfg;
}

}  // namespace

TEST_CASE("net config validation") {
  KnockoffNetConfig bad = tiny_config();
  bad.hidden_dim = 15;
  CHECK_THROWS_AS(KnockoffNet(4, bad, 1), std::invalid_argument);
  CHECK(KnockoffNetConfig::paper().hidden_dim == 512);
  CHECK(KnockoffNetConfig::paper().num_layers == 8);
  CHECK(KnockoffNetConfig::paper().num_heads == 8);
  CHECK(KnockoffNetConfig::desk().hidden_dim == 128);
}

TEST_CASE("generator output has the batch shape") {
  const int p = 6, b = 5;
  KnockoffNet net(p, tiny_config(), 11);
  Rng rng(12);
  const Matrix x = rng.normal_matrix(b, p);
  const Matrix z = rng.uniform_matrix(b, p);
  const Matrix xt = net.generate(x, z);
  CHECK(xt.rows() == b);
  CHECK(xt.cols() == p);
  CHECK(xt.allFinite());
}

TEST_CASE("eval-mode generation is deterministic") {
  const int p = 5, b = 4;
  KnockoffNet net(p, tiny_config(), 21);
  Rng rng(22);
  const Matrix x = rng.normal_matrix(b, p);
  const Matrix z = rng.uniform_matrix(b, p);
  CHECK(net.generate(x, z) == net.generate(x, z));
}

TEST_CASE("fresh noise changes almost every output entry") {
  const int p = 8, b = 32;
  KnockoffNet net(p, tiny_config(), 31);
  Rng rng(32);
  const Matrix x = rng.normal_matrix(b, p);
  const Matrix xt1 = net.generate(x, rng.uniform_matrix(b, p));
  const Matrix xt2 = net.generate(x, rng.uniform_matrix(b, p));
  int moved = 0;
  for (Eigen::Index i = 0; i < xt1.size(); ++i)
    if (std::abs(xt1(i) - xt2(i)) > 1e-6) ++moved;
  CHECK(static_cast<double>(moved) / static_cast<double>(xt1.size()) > 0.99);
}

TEST_CASE("generator rejects malformed input") {
  KnockoffNet net(4, tiny_config(), 41);
  Rng rng(42);
  CHECK_THROWS_AS(net.generate(rng.normal_matrix(3, 5),
                               rng.uniform_matrix(3, 5)),
                  std::invalid_argument);
  CHECK_THROWS_AS(net.generate(rng.normal_matrix(3, 4),
                               rng.uniform_matrix(2, 4)),
                  std::invalid_argument);
  Matrix bad_z = rng.uniform_matrix(3, 4);
  bad_z(1, 2) = 1.5;
  CHECK_THROWS_AS(net.generate(rng.normal_matrix(3, 4), bad_z),
                  std::invalid_argument);
  KnockoffNet poisoned(4, tiny_config(), 43);
  poisoned.parameters()[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(poisoned.generate(rng.normal_matrix(3, 4),
                                    rng.uniform_matrix(3, 4)),
                  std::invalid_argument);
}

TEST_CASE("train mode applies dropout, eval mode does not") {
  const int p = 6, b = 8;
  KnockoffNetConfig cfg = tiny_config();
  cfg.dropout = 0.5;
  KnockoffNet net(p, cfg, 51);
  Rng rng(52);
  const Matrix x = rng.normal_matrix(b, p);
  const Matrix z = rng.uniform_matrix(b, p);

  ad::Tape t1;
  Rng drop1(7);
  const Matrix train1 =
      t1.value(net.forward_graph(t1, x, z, true, &drop1, nullptr));
  ad::Tape t2;
  Rng drop2(8);
  const Matrix train2 =
      t2.value(net.forward_graph(t2, x, z, true, &drop2, nullptr));
  CHECK(train1 != train2);

  ad::Tape t3;
  Rng drop3(9);
  const Matrix repeat =
      t3.value(net.forward_graph(t3, x, z, true, &drop3, nullptr));
  Rng drop3b(9);
  ad::Tape t4;
  CHECK(repeat ==
        t4.value(net.forward_graph(t4, x, z, true, &drop3b, nullptr)));
}

TEST_CASE("generator gradient matches finite differences on sampled weights") {
  const int p = 6, b = 4;
  KnockoffNet net(p, tiny_config(), 61);
  Rng rng(62);
  const Matrix x = rng.normal_matrix(b, p);
  const Matrix z = rng.uniform_matrix(b, p);
  const Matrix mix = rng.normal_matrix(b, p);

  auto loss_of = [&](const KnockoffNet& n) {
    ad::Tape t;
    ad::Var out = n.forward_graph(t, x, z, false, nullptr, nullptr);
    Matrix v = t.value(out);
    return v.cwiseProduct(mix).mean();
  };

  ad::Tape tape;
  std::vector<ad::Var> pv;
  ad::Var out = net.forward_graph(tape, x, z, false, nullptr, &pv);
  ad::Var root = tape.mean_all(tape.cwise_mul(out, tape.constant(mix)));
  tape.backward(root);

  Rng pick(63);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 64; ++trial) {
    const int k =
        pick.uniform_int(0, static_cast<int>(net.parameters().size()) - 1);
    const int i = pick.uniform_int(
        0, static_cast<int>(net.parameters()[static_cast<std::size_t>(k)].size()) - 1);
    KnockoffNet plus = net, minus = net;
    plus.parameters()[static_cast<std::size_t>(k)](i) += h;
    minus.parameters()[static_cast<std::size_t>(k)](i) -= h;
    const double fd = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
    const double an = tape.grad(pv[static_cast<std::size_t>(k)])(i);
    worst = std::max(worst, std::abs(fd - an) /
                                std::max({std::abs(fd), std::abs(an), 1e-8}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("swapper samples saturate and mix as the logits dictate") {
  SwapperState s = make_swapper(64, 71);

  SECTION("large gap pins the relaxed sample near zero") {
    s.logits.row(0).setConstant(50.0);
    s.logits.row(1).setConstant(0.0);
    Rng rng(72);
    int below = 0;
    const int kDraws = 200;
    for (int d = 0; d < kDraws; ++d) {
      const Vector b = swapper_sample(s, rng, true);
      for (int j = 0; j < b.size(); ++j)
        if (b(j) < 1e-6) ++below;
    }
    CHECK(static_cast<double>(below) / (kDraws * s.logits.cols()) > 0.999);
  }

  SECTION("near-zero temperature concentrates on the endpoints") {
    // b = sigmoid(z/T) with z logistic-distributed, so the fraction within
    // 1e-3 of an endpoint is P(|z| > T ln 999): about 0.966 at T = 0.01 and
    // above 0.996 at T = 0.001.
    s = make_swapper(64, 73);
    s.temperature = 0.01;
    Rng rng(74);
    int extreme = 0, total = 0;
    for (int d = 0; d < 100; ++d) {
      const Vector b = swapper_sample(s, rng, true);
      for (int j = 0; j < b.size(); ++j, ++total)
        if (b(j) < 1e-3 || b(j) > 1.0 - 1e-3) ++extreme;
    }
    CHECK(static_cast<double>(extreme) / total > 0.95);

    s.temperature = 0.001;
    Rng rng2(75);
    extreme = 0;
    total = 0;
    for (int d = 0; d < 100; ++d) {
      const Vector b = swapper_sample(s, rng2, true);
      for (int j = 0; j < b.size(); ++j, ++total)
        if (b(j) < 1e-3 || b(j) > 1.0 - 1e-3) ++extreme;
    }
    CHECK(static_cast<double>(extreme) / total > 0.99);
  }

  SECTION("equal logits flip fair coins") {
    s = make_swapper(1, 75);
    s.logits.setZero();
    Rng rng(76);
    double mean = 0.0;
    const int kDraws = 10000;
    for (int d = 0; d < kDraws; ++d)
      mean += swapper_sample(s, rng, false)(0) / kDraws;
    CHECK(mean == Catch::Approx(0.5).margin(0.02));
  }

  SECTION("relaxed mean is monotone in the category-1 logit") {
    double prev = -1.0;
    for (double logit : {-2.0, -1.0, -0.3, 0.0, 0.4, 1.2, 2.5}) {
      SwapperState grid = make_swapper(1, 77);
      grid.logits(0, 0) = 0.0;
      grid.logits(1, 0) = logit;
      Rng rng(78);  // same noise stream per grid point
      double mean = 0.0;
      const int kDraws = 1000;
      for (int d = 0; d < kDraws; ++d)
        mean += swapper_sample(grid, rng, true)(0) / kDraws;
      CHECK(mean > prev);
      prev = mean;
    }
  }
}

TEST_CASE("relaxed graph sampler agrees with the direct sampler") {
  SwapperState s = make_swapper(9, 81);
  Rng noise(82);
  const Matrix gumbel = noise.gumbel_matrix(2, 9);

  ad::Tape t;
  ad::Var logits = t.param(s.logits);
  ad::Var b = swapper_sample_graph(t, logits, gumbel, s.temperature);

  // Reproduce with the plain sampler by feeding the same noise.
  Vector expected(9);
  for (int j = 0; j < 9; ++j) {
    const double z = ((s.logits(1, j) + gumbel(1, j)) -
                      (s.logits(0, j) + gumbel(0, j))) /
                     s.temperature;
    expected(j) = 1.0 / (1.0 + std::exp(-z));
  }
  CHECK((t.value(b).row(0).transpose() - expected).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("apply_swap endpoints, involution, and multiset preservation") {
  Rng rng(91);
  const int n = 10, p = 7;
  const Matrix x = rng.normal_matrix(n, p);
  const Matrix xt = rng.normal_matrix(n, p);

  const auto [x0, xt0] = apply_swap(x, xt, Vector::Zero(p));
  CHECK(x0 == x);
  CHECK(xt0 == xt);

  const auto [x1, xt1] = apply_swap(x, xt, Vector::Ones(p));
  CHECK(x1 == xt);
  CHECK(xt1 == x);

  Vector hard(p);
  for (int j = 0; j < p; ++j) hard(j) = rng.uniform() < 0.5 ? 1.0 : 0.0;
  const auto [xs, xts] = apply_swap(x, xt, hard);
  const auto [xb, xtb] = apply_swap(xs, xts, hard);
  CHECK(xb == x);
  CHECK(xtb == xt);

  // Hard swap only relabels which matrix holds each (row, coordinate) value.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      const bool match_direct = xs(i, j) == x(i, j) && xts(i, j) == xt(i, j);
      const bool match_swapped = xs(i, j) == xt(i, j) && xts(i, j) == x(i, j);
      CHECK((match_direct || match_swapped));
    }
  }

  Vector bad = Vector::Zero(p);
  bad(0) = 1.5;
  CHECK_THROWS_AS(apply_swap(x, xt, bad), std::invalid_argument);
}
