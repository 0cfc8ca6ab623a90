#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "knockoff/common.hpp"
#include "knockoff/rng.hpp"

namespace knockoff {

/// Post-training perturbation: mix the generated knockoff with a row-permuted
/// copy of the sample. `alpha_schedule_c` switches to the vanishing schedule
/// alpha_n = c / sqrt(n), which the consistency rate argument assumes; the
/// fixed default 0.5 matches the experimental configuration.
struct DrpConfig {
  double alpha = 0.5;
  std::uint64_t seed = 0;
  std::optional<double> alpha_schedule_c;

  void validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, "DrpConfig: alpha in [0, 1]");
    if (alpha_schedule_c)
      require(*alpha_schedule_c > 0.0, "DrpConfig: schedule constant > 0");
  }

  double effective_alpha(int n) const {
    validate();
    if (!alpha_schedule_c) return alpha;
    require(n >= 1, "DrpConfig: n >= 1");
    return std::min(1.0, *alpha_schedule_c / std::sqrt(static_cast<double>(n)));
  }
};

struct DrpInfo {
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t permutation_digest = 0;
};

/// (1 - alpha) * xtilde + alpha * X_rp with one whole-row permutation shared
/// by all columns, so the permuted block keeps the joint row law of x.
/// `forced_permutation` is a test hook.
inline Matrix apply_drp(const Matrix& xtilde, const Matrix& x,
                        const DrpConfig& cfg, DrpInfo* info = nullptr,
                        const std::vector<int>* forced_permutation = nullptr) {
  require(xtilde.rows() == x.rows() && xtilde.cols() == x.cols(),
          "apply_drp: shape mismatch");
  const int n = static_cast<int>(x.rows());
  const double alpha = cfg.effective_alpha(n);

  std::vector<int> perm;
  if (forced_permutation) {
    require(static_cast<int>(forced_permutation->size()) == n,
            "apply_drp: forced permutation length mismatch");
    perm = *forced_permutation;
  } else {
    Rng rng(cfg.seed);
    perm = rng.permutation(n);
  }

  Matrix permuted(n, x.cols());
  for (int i = 0; i < n; ++i)
    permuted.row(i) = x.row(perm[static_cast<std::size_t>(i)]);

  if (info) {
    info->alpha = alpha;
    info->seed = cfg.seed;
    std::uint64_t digest = 0xcbf29ce484222325ULL;
    for (int i : perm) {
      digest ^= static_cast<std::uint64_t>(i);
      digest *= 0x100000001b3ULL;
    }
    info->permutation_digest = digest;
  }
  if (alpha == 0.0) return xtilde;
  if (alpha == 1.0) return permuted;
  return (1.0 - alpha) * xtilde + alpha * permuted;
}

}  // namespace knockoff
