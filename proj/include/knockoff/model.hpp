#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "knockoff/ad.hpp"
#include "knockoff/common.hpp"
#include "knockoff/rng.hpp"

namespace knockoff {

struct KnockoffNetConfig {
  int num_heads = 8;
  int num_layers = 8;
  int hidden_dim = 512;
  double dropout = 0.1;
  int mlp_ratio = 4;

  void validate() const {
    require(num_heads >= 1 && num_layers >= 1 && hidden_dim >= 1,
            "KnockoffNetConfig: positive sizes required");
    require(hidden_dim % num_heads == 0,
            "KnockoffNetConfig: hidden_dim must be divisible by num_heads");
    require(dropout >= 0.0 && dropout < 1.0,
            "KnockoffNetConfig: dropout in [0, 1)");
    require(mlp_ratio >= 1, "KnockoffNetConfig: mlp_ratio >= 1");
  }

  /// Full-scale configuration used for the published experiments.
  static KnockoffNetConfig paper() { return KnockoffNetConfig{}; }

  /// Small preset that trains in minutes on a laptop-class CPU.
  static KnockoffNetConfig desk() {
    KnockoffNetConfig cfg;
    cfg.num_heads = 4;
    cfg.num_layers = 4;
    cfg.hidden_dim = 128;
    cfg.mlp_ratio = 2;
    return cfg;
  }
};

/// Attention-based knockoff generator. Each coordinate pair (x_j, z_j) is one
/// token, linearly embedded into the hidden width, combined with a learned
/// positional table, run through pre-norm attention blocks, and projected back
/// to one scalar per coordinate.
class KnockoffNet {
 public:
  KnockoffNet() = default;

  KnockoffNet(int p, KnockoffNetConfig cfg, std::uint64_t seed)
      : p_(p), cfg_(cfg) {
    cfg_.validate();
    require(p >= 1, "KnockoffNet: p >= 1");
    Rng rng(seed);
    const int h = cfg_.hidden_dim;
    const int mh = h * cfg_.mlp_ratio;
    auto init = [&](const std::string& name, int rows, int cols,
                    double scale) {
      names_.push_back(name);
      params_.push_back(scale == 0.0
                            ? Matrix::Zero(rows, cols)
                            : Matrix(scale * rng.normal_matrix(rows, cols)));
    };
    auto init_ones = [&](const std::string& name, int cols) {
      names_.push_back(name);
      params_.push_back(Matrix::Ones(1, cols));
    };

    init("embed_w", 2, h, 0.02);
    init("embed_b", 1, h, 0.0);
    init("pos", p, h, 0.02);
    for (int l = 0; l < cfg_.num_layers; ++l) {
      const std::string tag = "layer" + std::to_string(l) + ".";
      init_ones(tag + "ln1_g", h);
      init(tag + "ln1_b", 1, h, 0.0);
      init(tag + "wq", h, h, 0.02);
      init(tag + "bq", 1, h, 0.0);
      init(tag + "wk", h, h, 0.02);
      init(tag + "bk", 1, h, 0.0);
      init(tag + "wv", h, h, 0.02);
      init(tag + "bv", 1, h, 0.0);
      init(tag + "wo", h, h, 0.02);
      init(tag + "bo", 1, h, 0.0);
      init_ones(tag + "ln2_g", h);
      init(tag + "ln2_b", 1, h, 0.0);
      init(tag + "w1", h, mh, 0.02);
      init(tag + "b1", 1, mh, 0.0);
      init(tag + "w2", mh, h, 0.02);
      init(tag + "b2", 1, h, 0.0);
    }
    init_ones("ln_f_g", h);
    init("ln_f_b", 1, h, 0.0);
    init("head_w", h, 1, 0.02);
    init("head_b", 1, 1, 0.0);
  }

  int input_dim() const { return p_; }
  const KnockoffNetConfig& config() const { return cfg_; }
  std::vector<Matrix>& parameters() { return params_; }
  const std::vector<Matrix>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const Matrix& m : params_) total += static_cast<std::size_t>(m.size());
    return total;
  }

  /// Builds the generator forward pass on `tape`. When `param_vars` is given
  /// the weights are registered as differentiable parameters (in declaration
  /// order); otherwise they enter as constants. Dropout is active only in
  /// train mode and draws its masks from `dropout_rng`.
  ad::Var forward_graph(ad::Tape& tape, const Matrix& x_batch,
                        const Matrix& z_batch, bool train_mode,
                        Rng* dropout_rng,
                        std::vector<ad::Var>* param_vars) const {
    require(x_batch.cols() == p_, "KnockoffNet: x has wrong width");
    require(z_batch.rows() == x_batch.rows() && z_batch.cols() == p_,
            "KnockoffNet: z shape mismatch");
    require(z_batch.minCoeff() >= 0.0 && z_batch.maxCoeff() < 1.0,
            "KnockoffNet: z entries must lie in [0, 1)");
    require(!train_mode || dropout_rng != nullptr,
            "KnockoffNet: train mode needs a dropout stream");
    for (const Matrix& m : params_)
      require(m.allFinite(), "KnockoffNet: non-finite weights");

    std::vector<ad::Var> vars;
    vars.reserve(params_.size());
    for (const Matrix& m : params_)
      vars.push_back(param_vars ? tape.param(m) : tape.constant(m));
    if (param_vars) *param_vars = vars;

    const int batch = static_cast<int>(x_batch.rows());
    Matrix tokens(batch * p_, 2);
    for (int b = 0; b < batch; ++b) {
      for (int j = 0; j < p_; ++j) {
        tokens(b * p_ + j, 0) = x_batch(b, j);
        tokens(b * p_ + j, 1) = z_batch(b, j);
      }
    }

    std::size_t idx = 0;
    auto next = [&]() { return vars[idx++]; };

    ad::Var embed_w = next(), embed_b = next(), pos = next();
    ad::Var h = tape.add_rowvec(tape.matmul(tape.constant(tokens), embed_w),
                                embed_b);
    h = tape.add_tile_rows(h, pos, batch);

    const bool drop = train_mode && cfg_.dropout > 0.0;
    for (int l = 0; l < cfg_.num_layers; ++l) {
      ad::Var ln1_g = next(), ln1_b = next();
      ad::Var wq = next(), bq = next(), wk = next(), bk = next();
      ad::Var wv = next(), bv = next(), wo = next(), bo = next();
      ad::Var ln2_g = next(), ln2_b = next();
      ad::Var w1 = next(), b1 = next(), w2 = next(), b2 = next();

      ad::Var a = tape.layer_norm(h, ln1_g, ln1_b);
      ad::Var q = tape.add_rowvec(tape.matmul(a, wq), bq);
      ad::Var k = tape.add_rowvec(tape.matmul(a, wk), bk);
      ad::Var v = tape.add_rowvec(tape.matmul(a, wv), bv);
      ad::Var att = tape.attention(q, k, v, batch, cfg_.num_heads);
      att = tape.add_rowvec(tape.matmul(att, wo), bo);
      if (drop) att = tape.dropout(att, cfg_.dropout, *dropout_rng, true);
      h = tape.add(h, att);

      ad::Var m = tape.layer_norm(h, ln2_g, ln2_b);
      m = tape.gelu(tape.add_rowvec(tape.matmul(m, w1), b1));
      m = tape.add_rowvec(tape.matmul(m, w2), b2);
      if (drop) m = tape.dropout(m, cfg_.dropout, *dropout_rng, true);
      h = tape.add(h, m);
    }

    ad::Var ln_f_g = next(), ln_f_b = next();
    ad::Var head_w = next(), head_b = next();
    ad::Var f = tape.layer_norm(h, ln_f_g, ln_f_b);
    ad::Var out = tape.add_rowvec(tape.matmul(f, head_w), head_b);
    return tape.tokens_to_rows(out, batch, p_);
  }

  /// Eval-mode generation: deterministic given (x, z, weights).
  Matrix generate(const Matrix& x, const Matrix& z) const {
    ad::Tape tape;
    return tape.value(forward_graph(tape, x, z, false, nullptr, nullptr));
  }

 private:
  int p_ = 0;
  KnockoffNetConfig cfg_;
  std::vector<Matrix> params_;
  std::vector<std::string> names_;
};

/// Adversarial swapper: a 2 x p logit table driving p independent binary
/// Gumbel-softmax draws at a fixed temperature.
struct SwapperState {
  Matrix logits;
  double temperature = 0.2;

  void validate() const {
    require(logits.rows() == 2 && logits.cols() >= 1,
            "SwapperState: logits must be 2 x p");
    require(temperature > 0.0, "SwapperState: temperature > 0");
  }
};

inline SwapperState make_swapper(int p, std::uint64_t seed) {
  require(p >= 1, "make_swapper: p >= 1");
  Rng rng(seed);
  SwapperState s;
  s.logits = 0.1 * rng.normal_matrix(2, p);
  return s;
}

/// One swap-indicator draw per coordinate. Relaxed: the Gumbel-softmax mass
/// on category 1. Hard: its argmax indicator.
inline Vector swapper_sample(const SwapperState& state, Rng& rng,
                             bool relaxed) {
  state.validate();
  const int p = static_cast<int>(state.logits.cols());
  const Matrix gumbel = rng.gumbel_matrix(2, p);
  Vector b(p);
  for (int j = 0; j < p; ++j) {
    const double z = ((state.logits(1, j) + gumbel(1, j)) -
                      (state.logits(0, j) + gumbel(0, j))) /
                     state.temperature;
    if (relaxed) {
      b(j) = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                      : std::exp(z) / (1.0 + std::exp(z));
    } else {
      b(j) = z > 0.0 ? 1.0 : 0.0;
    }
  }
  return b;
}

/// Relaxed swap indicators as a differentiable 1 x p row given pre-drawn
/// Gumbel noise (2 x p).
inline ad::Var swapper_sample_graph(ad::Tape& tape, ad::Var logits,
                                    const Matrix& gumbel, double temperature) {
  require(temperature > 0.0, "swapper_sample_graph: temperature > 0");
  require(gumbel.rows() == 2 && gumbel.cols() == tape.value(logits).cols(),
          "swapper_sample_graph: gumbel shape mismatch");
  ad::Var noisy = tape.add(logits, tape.constant(gumbel));
  ad::Var diff = tape.sub(tape.slice_rows(noisy, 1, 1),
                          tape.slice_rows(noisy, 0, 1));
  return tape.sigmoid(tape.scale(diff, 1.0 / temperature));
}

/// Column-wise convex exchange of the pair: with hard b this is exactly the
/// coordinate swap; with relaxed b it is its differentiable interpolation.
inline std::pair<Matrix, Matrix> apply_swap(const Matrix& x, const Matrix& xt,
                                            const Vector& b) {
  require(x.rows() == xt.rows() && x.cols() == xt.cols(),
          "apply_swap: shape mismatch");
  require(b.size() == x.cols(), "apply_swap: indicator length mismatch");
  require(b.minCoeff() >= 0.0 && b.maxCoeff() <= 1.0,
          "apply_swap: b outside [0, 1]");
  Matrix x_sw(x.rows(), x.cols()), xt_sw(x.rows(), x.cols());
  for (int j = 0; j < x.cols(); ++j) {
    x_sw.col(j) = (1.0 - b(j)) * x.col(j) + b(j) * xt.col(j);
    xt_sw.col(j) = b(j) * x.col(j) + (1.0 - b(j)) * xt.col(j);
  }
  return {x_sw, xt_sw};
}

inline std::pair<ad::Var, ad::Var> apply_swap_graph(ad::Tape& tape, ad::Var x,
                                                    ad::Var xt, ad::Var b) {
  const int p = static_cast<int>(tape.value(x).cols());
  require(tape.value(b).rows() == 1 && tape.value(b).cols() == p,
          "apply_swap_graph: b must be 1 x p");
  ad::Var ones = tape.constant(Matrix::Ones(1, p));
  ad::Var keep = tape.sub(ones, b);
  ad::Var x_sw =
      tape.add(tape.rowvec_mul(x, keep), tape.rowvec_mul(xt, b));
  ad::Var xt_sw =
      tape.add(tape.rowvec_mul(x, b), tape.rowvec_mul(xt, keep));
  return {x_sw, xt_sw};
}

}  // namespace knockoff
