// Smallest end-to-end use of the library: sample a mixture dataset, train a
// tiny generator, perturb the knockoff, select features, and print the
// realized FDP/power.

#include <cstdio>

#include "knockoff/datagen.hpp"
#include "knockoff/drp.hpp"
#include "knockoff/filter.hpp"
#include "knockoff/trainer.hpp"

using namespace knockoff;

int main() {
  const int n = 400, p = 16;
  const std::uint64_t seed = 42;

  GaussianMixtureSpec mixture;
  const Matrix raw = sample_gaussian_mixture(mixture, n, p, seed);

  // Any nonempty selection holds at least ceil(1/q) features, so q = 0.2
  // with 6 true features leaves room for an exact hit.
  CoefficientSpec coef_spec;
  coef_spec.num_nonnull = 6;
  coef_spec.scale_divisor = 5.0;
  const Coefficients coef = sample_coefficients(coef_spec, n, p, seed + 1);
  const Vector y = synthesize_linear_response(raw, coef.beta, seed + 2);

  const Matrix x = standardize_columns(raw);

  TrainConfig train_cfg = TrainConfig::desk_defaults();
  train_cfg.epochs = 10;
  train_cfg.seed = seed + 3;
  KnockoffNetConfig net_cfg = KnockoffNetConfig::desk();
  const TrainResult trained = train(x, train_cfg, net_cfg);
  std::printf("trained %d epoch(s), best validation at epoch %d\n",
              trained.log.stopped_epoch, trained.log.best_epoch);

  Rng z_rng(seed + 4);
  Matrix xtilde = trained.net.generate(x, z_rng.uniform_matrix(n, p));
  DrpConfig drp_cfg;
  drp_cfg.seed = seed + 5;
  xtilde = apply_drp(xtilde, x, drp_cfg);

  const SelectionResult sel =
      run_filter(x, xtilde, y, coef.nonnull, 0.2, seed + 6);
  std::printf("selected %zu feature(s); FDP %.3f, power %.3f\n",
              sel.selected.size(), sel.fdp, sel.power);
  return 0;
}
