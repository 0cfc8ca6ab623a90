#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "knockoff/common.hpp"
#include "knockoff/rng.hpp"

// Minimal reverse-mode tape over Eigen matrices: just the operations the
// knockoff generator and its losses need. Graphs are built per step and the
// whole tape is discarded afterwards. Scalars are 1x1 matrices.

namespace knockoff::ad {

using knockoff::Matrix;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int index = -1;
  bool valid() const { return tape != nullptr && index >= 0; }
};

class Tape {
 public:
  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  Var param(Matrix value) { return push(std::move(value), true, {}); }

  const Matrix& value(Var v) const { return node(v).value; }

  /// Gradient of the last backward() root with respect to v; zeros if the
  /// root did not depend on v.
  Matrix grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0)
      return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var root) {
    Node& r = node(root);
    require(r.value.rows() == 1 && r.value.cols() == 1,
            "ad: backward root must be scalar");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    r.grad = Matrix::Ones(1, 1);
    for (int i = root.index; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backprop && n.grad.size() != 0) n.backprop(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- arithmetic ----

  Var add(Var a, Var b) {
    same_shape(a, b, "ad::add");
    Matrix y = value(a) + value(b);
    return unary_binary(std::move(y), a, b, [](const Matrix& g, Matrix* da,
                                               Matrix* db) {
      if (da) *da = g;
      if (db) *db = g;
    });
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "ad::sub");
    Matrix y = value(a) - value(b);
    return unary_binary(std::move(y), a, b, [](const Matrix& g, Matrix* da,
                                               Matrix* db) {
      if (da) *da = g;
      if (db) *db = -g;
    });
  }

  Var scale(Var a, double c) {
    Matrix y = c * value(a);
    return unary_binary(std::move(y), a, Var{}, [c](const Matrix& g,
                                                    Matrix* da, Matrix*) {
      if (da) *da = c * g;
    });
  }

  Var add_scalar(Var a, double c) {
    Matrix y = (value(a).array() + c).matrix();
    return unary_binary(std::move(y), a, Var{},
                        [](const Matrix& g, Matrix* da, Matrix*) {
                          if (da) *da = g;
                        });
  }

  Var cwise_mul(Var a, Var b) {
    same_shape(a, b, "ad::cwise_mul");
    Matrix y = value(a).cwiseProduct(value(b));
    const int ia = a.index, ib = b.index;
    return unary_binary(std::move(y), a, b,
                        [this, ia, ib](const Matrix& g, Matrix* da,
                                       Matrix* db) {
                          if (da) *da = g.cwiseProduct(nodes_[static_cast<std::size_t>(ib)].value);
                          if (db) *db = g.cwiseProduct(nodes_[static_cast<std::size_t>(ia)].value);
                        });
  }

  Var cwise_div(Var a, Var b) {
    same_shape(a, b, "ad::cwise_div");
    Matrix y = value(a).cwiseQuotient(value(b));
    const int ib = b.index, iy_pending = static_cast<int>(nodes_.size());
    return unary_binary(std::move(y), a, b,
                        [this, ib, iy_pending](const Matrix& g, Matrix* da,
                                               Matrix* db) {
                          const Matrix& bv =
                              nodes_[static_cast<std::size_t>(ib)].value;
                          const Matrix& yv =
                              nodes_[static_cast<std::size_t>(iy_pending)].value;
                          if (da) *da = g.cwiseQuotient(bv);
                          if (db) *db = -g.cwiseProduct(yv).cwiseQuotient(bv);
                        });
  }

  Var matmul(Var a, Var b) {
    require(value(a).cols() == value(b).rows(), "ad::matmul: shape mismatch");
    Matrix y = value(a) * value(b);
    const int ia = a.index, ib = b.index;
    return unary_binary(std::move(y), a, b,
                        [this, ia, ib](const Matrix& g, Matrix* da,
                                       Matrix* db) {
                          if (da) *da = g * nodes_[static_cast<std::size_t>(ib)].value.transpose();
                          if (db) *db = nodes_[static_cast<std::size_t>(ia)].value.transpose() * g;
                        });
  }

  /// Broadcast a 1 x d row across all rows of a (n x d): y = a + 1 r.
  Var add_rowvec(Var a, Var r) {
    require(value(r).rows() == 1 && value(r).cols() == value(a).cols(),
            "ad::add_rowvec: shape mismatch");
    Matrix y = value(a).rowwise() + value(r).row(0);
    return unary_binary(std::move(y), a, r,
                        [](const Matrix& g, Matrix* da, Matrix* dr) {
                          if (da) *da = g;
                          if (dr) *dr = g.colwise().sum();
                        });
  }

  /// Broadcast-multiply each row of a (n x d) by the 1 x d row r.
  Var rowvec_mul(Var a, Var r) {
    require(value(r).rows() == 1 && value(r).cols() == value(a).cols(),
            "ad::rowvec_mul: shape mismatch");
    Matrix y = (value(a).array().rowwise() * value(r).row(0).array()).matrix();
    const int ia = a.index, ir = r.index;
    return unary_binary(
        std::move(y), a, r,
        [this, ia, ir](const Matrix& g, Matrix* da, Matrix* dr) {
          const Matrix& av = nodes_[static_cast<std::size_t>(ia)].value;
          const Matrix& rv = nodes_[static_cast<std::size_t>(ir)].value;
          if (da) *da = (g.array().rowwise() * rv.row(0).array()).matrix();
          if (dr) *dr = g.cwiseProduct(av).colwise().sum();
        });
  }

  /// y = a + tile(block, times) where a is (times*s) x d and block is s x d.
  Var add_tile_rows(Var a, Var block, int times) {
    const Matrix& bv = value(block);
    require(value(a).rows() == bv.rows() * times &&
                value(a).cols() == bv.cols(),
            "ad::add_tile_rows: shape mismatch");
    Matrix y = value(a);
    const Eigen::Index s = bv.rows();
    for (int t = 0; t < times; ++t) y.middleRows(t * s, s) += bv;
    return unary_binary(std::move(y), a, block,
                        [s, times](const Matrix& g, Matrix* da, Matrix* db) {
                          if (da) *da = g;
                          if (db) {
                            Matrix acc = Matrix::Zero(s, g.cols());
                            for (int t = 0; t < times; ++t)
                              acc += g.middleRows(t * s, s);
                            *db = acc;
                          }
                        });
  }

  // ---- nonlinearities ----

  Var gelu(Var a) {
    const Matrix& x = value(a);
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x(i);
      y(i) = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
    const int ia = a.index;
    return unary_binary(std::move(y), a, Var{},
                        [this, ia](const Matrix& g, Matrix* da, Matrix*) {
                          if (!da) return;
                          const Matrix& x =
                              nodes_[static_cast<std::size_t>(ia)].value;
                          Matrix d(x.rows(), x.cols());
                          constexpr double inv_sqrt2pi = 0.3989422804014327;
                          for (Eigen::Index i = 0; i < x.size(); ++i) {
                            const double v = x(i);
                            const double cdf =
                                0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
                            const double pdf =
                                inv_sqrt2pi * std::exp(-0.5 * v * v);
                            d(i) = cdf + v * pdf;
                          }
                          *da = g.cwiseProduct(d);
                        });
  }

  Var sigmoid(Var a) {
    const Matrix& x = value(a);
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x(i);
      y(i) = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
    }
    const int iy_pending = static_cast<int>(nodes_.size());
    return unary_binary(std::move(y), a, Var{},
                        [this, iy_pending](const Matrix& g, Matrix* da,
                                           Matrix*) {
                          if (!da) return;
                          const Matrix& s =
                              nodes_[static_cast<std::size_t>(iy_pending)].value;
                          *da = g.cwiseProduct(
                              s.cwiseProduct(Matrix::Ones(s.rows(), s.cols()) - s));
                        });
  }

  /// |x|^p for p in {1, 2}; the p=1 subgradient at 0 is 0.
  Var abs_pow(Var a, int order) {
    require(order == 1 || order == 2, "ad::abs_pow: order must be 1 or 2");
    const Matrix& x = value(a);
    Matrix y =
        order == 1 ? Matrix(x.cwiseAbs()) : Matrix(x.cwiseProduct(x));
    const int ia = a.index;
    return unary_binary(
        std::move(y), a, Var{},
        [this, ia, order](const Matrix& g, Matrix* da, Matrix*) {
          if (!da) return;
          const Matrix& x = nodes_[static_cast<std::size_t>(ia)].value;
          if (order == 2) {
            *da = 2.0 * g.cwiseProduct(x);
          } else {
            Matrix sign(x.rows(), x.cols());
            for (Eigen::Index i = 0; i < x.size(); ++i)
              sign(i) = x(i) > 0.0 ? 1.0 : (x(i) < 0.0 ? -1.0 : 0.0);
            *da = g.cwiseProduct(sign);
          }
        });
  }

  Var sqrt_eps(Var a, double eps = 1e-24) {
    Matrix y = (value(a).array() + eps).sqrt().matrix();
    const int iy_pending = static_cast<int>(nodes_.size());
    return unary_binary(std::move(y), a, Var{},
                        [this, iy_pending](const Matrix& g, Matrix* da,
                                           Matrix*) {
                          if (!da) return;
                          const Matrix& y =
                              nodes_[static_cast<std::size_t>(iy_pending)].value;
                          *da = 0.5 * g.cwiseQuotient(y);
                        });
  }

  // ---- normalization and attention ----

  /// Pre-norm LayerNorm over each row with learnable gain/bias (1 x d).
  Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5) {
    const Matrix& x = value(a);
    const Matrix& gv = value(gamma);
    require(gv.rows() == 1 && gv.cols() == x.cols(),
            "ad::layer_norm: gamma shape");
    require(value(beta).rows() == 1 && value(beta).cols() == x.cols(),
            "ad::layer_norm: beta shape");
    auto cache = std::make_shared<std::pair<Matrix, Vector>>();
    Matrix& xhat = cache->first;
    Vector& inv_sigma = cache->second;
    xhat.resize(x.rows(), x.cols());
    inv_sigma.resize(x.rows());
    const double d = static_cast<double>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mu = x.row(i).mean();
      const double var = (x.row(i).array() - mu).square().sum() / d;
      inv_sigma(i) = 1.0 / std::sqrt(var + eps);
      xhat.row(i) = (x.row(i).array() - mu) * inv_sigma(i);
    }
    Matrix y = xhat;
    y.array().rowwise() *= gv.row(0).array();
    y.array().rowwise() += value(beta).row(0).array();
    const int ig = gamma.index;
    return ternary(std::move(y), a, gamma, beta,
                   [this, ig, cache, d](const Matrix& g, Matrix* da,
                                        Matrix* dgamma, Matrix* dbeta) {
                     const Matrix& xhat = cache->first;
                     const Vector& inv_sigma = cache->second;
                     if (dbeta) *dbeta = g.colwise().sum();
                     if (dgamma) *dgamma = g.cwiseProduct(xhat).colwise().sum();
                     if (da) {
                       const Matrix& gv =
                           nodes_[static_cast<std::size_t>(ig)].value;
                       Matrix dxhat =
                           (g.array().rowwise() * gv.row(0).array()).matrix();
                       da->resize(g.rows(), g.cols());
                       for (Eigen::Index i = 0; i < g.rows(); ++i) {
                         const double m1 = dxhat.row(i).mean();
                         const double m2 =
                             dxhat.row(i).cwiseProduct(xhat.row(i)).sum() / d;
                         da->row(i) = (inv_sigma(i) *
                                       (dxhat.row(i).array() - m1 -
                                        xhat.row(i).array() * m2))
                                          .matrix();
                       }
                     }
                   });
  }

  /// Multi-head self-attention over `batch` independent sequences stacked
  /// along rows: q, k, v are (batch*seq) x h with h split evenly into heads.
  Var attention(Var q, Var k, Var v, int batch, int heads) {
    const Matrix& qv = value(q);
    require(qv.rows() % batch == 0, "ad::attention: rows not divisible");
    const int seq = static_cast<int>(qv.rows()) / batch;
    const int h = static_cast<int>(qv.cols());
    require(h % heads == 0, "ad::attention: heads must divide width");
    const int dh = h / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    same_shape(q, k, "ad::attention");
    same_shape(q, v, "ad::attention");

    auto softmaxes = std::make_shared<std::vector<Matrix>>(
        static_cast<std::size_t>(batch * heads));
    Matrix out(qv.rows(), h);
    const Matrix& kv = value(k);
    const Matrix& vv = value(v);
    for (int b = 0; b < batch; ++b) {
      for (int hd = 0; hd < heads; ++hd) {
        const auto qb = qv.block(b * seq, hd * dh, seq, dh);
        const auto kb = kv.block(b * seq, hd * dh, seq, dh);
        const auto vb = vv.block(b * seq, hd * dh, seq, dh);
        Matrix scores = (qb * kb.transpose()) * scl;
        for (Eigen::Index r = 0; r < scores.rows(); ++r) {
          const double mx = scores.row(r).maxCoeff();
          scores.row(r) = (scores.row(r).array() - mx).exp();
          scores.row(r) /= scores.row(r).sum();
        }
        (*softmaxes)[static_cast<std::size_t>(b * heads + hd)] = scores;
        out.block(b * seq, hd * dh, seq, dh) = scores * vb;
      }
    }
    const int iq = q.index, ik = k.index, iv = v.index;
    return ternary(
        std::move(out), q, k, v,
        [this, iq, ik, iv, softmaxes, batch, heads, seq, dh, scl](
            const Matrix& g, Matrix* dq, Matrix* dk, Matrix* dv) {
          const Matrix& qv = nodes_[static_cast<std::size_t>(iq)].value;
          const Matrix& kv = nodes_[static_cast<std::size_t>(ik)].value;
          const Matrix& vv = nodes_[static_cast<std::size_t>(iv)].value;
          if (dq) dq->setZero(qv.rows(), qv.cols());
          if (dk) dk->setZero(kv.rows(), kv.cols());
          if (dv) dv->setZero(vv.rows(), vv.cols());
          for (int b = 0; b < batch; ++b) {
            for (int hd = 0; hd < heads; ++hd) {
              const Matrix& a =
                  (*softmaxes)[static_cast<std::size_t>(b * heads + hd)];
              const auto qb = qv.block(b * seq, hd * dh, seq, dh);
              const auto kb = kv.block(b * seq, hd * dh, seq, dh);
              const auto vb = vv.block(b * seq, hd * dh, seq, dh);
              const auto go = g.block(b * seq, hd * dh, seq, dh);
              if (dv) dv->block(b * seq, hd * dh, seq, dh) = a.transpose() * go;
              if (dq || dk) {
                Matrix da = go * vb.transpose();
                Matrix ds(a.rows(), a.cols());
                for (Eigen::Index r = 0; r < a.rows(); ++r) {
                  const double dot = da.row(r).cwiseProduct(a.row(r)).sum();
                  ds.row(r) =
                      (a.row(r).array() * (da.row(r).array() - dot)).matrix();
                }
                ds *= scl;
                if (dq) dq->block(b * seq, hd * dh, seq, dh) = ds * kb;
                if (dk)
                  dk->block(b * seq, hd * dh, seq, dh) = ds.transpose() * qb;
              }
            }
          }
        });
  }

  /// Inverted dropout; identity when inactive.
  Var dropout(Var a, double rate, Rng& rng, bool active) {
    require(rate >= 0.0 && rate < 1.0, "ad::dropout: rate in [0, 1)");
    if (!active || rate == 0.0) return a;
    const Matrix& x = value(a);
    auto mask = std::make_shared<Matrix>(x.rows(), x.cols());
    const double keep = 1.0 - rate;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      (*mask)(i) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Matrix y = x.cwiseProduct(*mask);
    return unary_binary(std::move(y), a, Var{},
                        [mask](const Matrix& g, Matrix* da, Matrix*) {
                          if (da) *da = g.cwiseProduct(*mask);
                        });
  }

  // ---- shape ops ----

  Var slice_cols(Var a, int c0, int width) {
    require(c0 >= 0 && width >= 1 && c0 + width <= value(a).cols(),
            "ad::slice_cols: out of range");
    Matrix y = value(a).middleCols(c0, width);
    const Eigen::Index rows = value(a).rows(), cols = value(a).cols();
    return unary_binary(std::move(y), a, Var{},
                        [c0, width, rows, cols](const Matrix& g, Matrix* da,
                                                Matrix*) {
                          if (!da) return;
                          da->setZero(rows, cols);
                          da->middleCols(c0, width) = g;
                        });
  }

  Var slice_rows(Var a, int r0, int height) {
    require(r0 >= 0 && height >= 1 && r0 + height <= value(a).rows(),
            "ad::slice_rows: out of range");
    Matrix y = value(a).middleRows(r0, height);
    const Eigen::Index rows = value(a).rows(), cols = value(a).cols();
    return unary_binary(std::move(y), a, Var{},
                        [r0, height, rows, cols](const Matrix& g, Matrix* da,
                                                 Matrix*) {
                          if (!da) return;
                          da->setZero(rows, cols);
                          da->middleRows(r0, height) = g;
                        });
  }

  Var concat_cols(Var a, Var b) {
    require(value(a).rows() == value(b).rows(), "ad::concat_cols: rows");
    Matrix y(value(a).rows(), value(a).cols() + value(b).cols());
    y << value(a), value(b);
    const Eigen::Index ca = value(a).cols(), cb = value(b).cols();
    return unary_binary(std::move(y), a, b,
                        [ca, cb](const Matrix& g, Matrix* da, Matrix* db) {
                          if (da) *da = g.leftCols(ca);
                          if (db) *db = g.rightCols(cb);
                        });
  }

  Var concat_rows(Var a, Var b) {
    require(value(a).cols() == value(b).cols(), "ad::concat_rows: cols");
    Matrix y(value(a).rows() + value(b).rows(), value(a).cols());
    y << value(a), value(b);
    const Eigen::Index ra = value(a).rows(), rb = value(b).rows();
    return unary_binary(std::move(y), a, b,
                        [ra, rb](const Matrix& g, Matrix* da, Matrix* db) {
                          if (da) *da = g.topRows(ra);
                          if (db) *db = g.bottomRows(rb);
                        });
  }

  /// (batch*tokens) x 1 column of per-token outputs -> batch x tokens.
  Var tokens_to_rows(Var a, int batch, int tokens) {
    const Matrix& x = value(a);
    require(x.cols() == 1 && x.rows() == batch * tokens,
            "ad::tokens_to_rows: shape mismatch");
    Matrix y(batch, tokens);
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < tokens; ++t) y(b, t) = x(b * tokens + t, 0);
    return unary_binary(std::move(y), a, Var{},
                        [batch, tokens](const Matrix& g, Matrix* da, Matrix*) {
                          if (!da) return;
                          da->resize(batch * tokens, 1);
                          for (int b = 0; b < batch; ++b)
                            for (int t = 0; t < tokens; ++t)
                              (*da)(b * tokens + t, 0) = g(b, t);
                        });
  }

  /// Sorts every column ascending; gradients flow through the permutation
  /// fixed at forward time.
  Var sort_columns(Var a) {
    const Matrix& x = value(a);
    auto perms = std::make_shared<std::vector<std::vector<int>>>(
        static_cast<std::size_t>(x.cols()));
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      auto& perm = (*perms)[static_cast<std::size_t>(c)];
      perm.resize(static_cast<std::size_t>(x.rows()));
      std::iota(perm.begin(), perm.end(), 0);
      std::sort(perm.begin(), perm.end(),
                [&](int i, int j) { return x(i, c) < x(j, c); });
      for (Eigen::Index r = 0; r < x.rows(); ++r)
        y(r, c) = x(perm[static_cast<std::size_t>(r)], c);
    }
    return unary_binary(std::move(y), a, Var{},
                        [perms](const Matrix& g, Matrix* da, Matrix*) {
                          if (!da) return;
                          da->setZero(g.rows(), g.cols());
                          for (Eigen::Index c = 0; c < g.cols(); ++c) {
                            const auto& perm =
                                (*perms)[static_cast<std::size_t>(c)];
                            for (Eigen::Index r = 0; r < g.rows(); ++r)
                              (*da)(perm[static_cast<std::size_t>(r)], c) +=
                                  g(r, c);
                          }
                        });
  }

  // ---- reductions ----

  Var mean_all(Var a) {
    const double inv = 1.0 / static_cast<double>(value(a).size());
    Matrix y(1, 1);
    y(0, 0) = value(a).sum() * inv;
    const Eigen::Index rows = value(a).rows(), cols = value(a).cols();
    return unary_binary(std::move(y), a, Var{},
                        [inv, rows, cols](const Matrix& g, Matrix* da,
                                          Matrix*) {
                          if (da)
                            *da = Matrix::Constant(rows, cols, g(0, 0) * inv);
                        });
  }

  Var sum_all(Var a) {
    Matrix y(1, 1);
    y(0, 0) = value(a).sum();
    const Eigen::Index rows = value(a).rows(), cols = value(a).cols();
    return unary_binary(std::move(y), a, Var{},
                        [rows, cols](const Matrix& g, Matrix* da, Matrix*) {
                          if (da)
                            *da = Matrix::Constant(rows, cols, g(0, 0));
                        });
  }

  Var colwise_mean(Var a) {
    Matrix y = value(a).colwise().mean();
    const Eigen::Index rows = value(a).rows();
    const double inv = 1.0 / static_cast<double>(rows);
    return unary_binary(std::move(y), a, Var{},
                        [rows, inv](const Matrix& g, Matrix* da, Matrix*) {
                          if (da)
                            *da = (Matrix::Ones(rows, 1) * g.row(0)) * inv;
                        });
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void(const Matrix&)> backprop;
  };

  const Node& node(Var v) const {
    require(v.tape == this && v.index >= 0 &&
                v.index < static_cast<int>(nodes_.size()),
            "ad: var does not belong to this tape");
    return nodes_[static_cast<std::size_t>(v.index)];
  }
  Node& node(Var v) { return const_cast<Node&>(std::as_const(*this).node(v)); }

  void same_shape(Var a, Var b, const char* where) {
    require(value(a).rows() == value(b).rows() &&
                value(a).cols() == value(b).cols(),
            std::string(where) + ": shape mismatch");
  }

  bool needs(Var v) const { return v.valid() && node(v).needs_grad; }

  void accumulate(int index, Matrix&& g) {
    Node& n = nodes_[static_cast<std::size_t>(index)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = std::move(g);
    else
      n.grad += g;
  }

  Var push(Matrix value, bool needs_grad,
           std::function<void(const Matrix&)> backprop) {
    require(value.allFinite(), "ad: non-finite value entering the tape");
    nodes_.push_back(Node{std::move(value), Matrix(), needs_grad,
                          std::move(backprop)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Registers a node with up to two parents. The kernel writes the parent
  /// gradients it is asked for (non-null pointers) given the output gradient.
  template <typename Kernel>
  Var unary_binary(Matrix y, Var a, Var b, Kernel kernel) {
    const bool na = needs(a), nb = needs(b);
    const int ia = a.index, ib = b.index;
    std::function<void(const Matrix&)> bp;
    if (na || nb) {
      bp = [this, ia, ib, na, nb, kernel](const Matrix& g) {
        Matrix da, db;
        kernel(g, na ? &da : nullptr, nb ? &db : nullptr);
        if (na) accumulate(ia, std::move(da));
        if (nb) accumulate(ib, std::move(db));
      };
    }
    Var out = push(std::move(y), na || nb, std::move(bp));
    return out;
  }

  template <typename Kernel>
  Var ternary(Matrix y, Var a, Var b, Var c, Kernel kernel) {
    const bool na = needs(a), nb = needs(b), nc = needs(c);
    const int ia = a.index, ib = b.index, ic = c.index;
    std::function<void(const Matrix&)> bp;
    if (na || nb || nc) {
      bp = [this, ia, ib, ic, na, nb, nc, kernel](const Matrix& g) {
        Matrix da, db, dc;
        kernel(g, na ? &da : nullptr, nb ? &db : nullptr, nc ? &dc : nullptr);
        if (na) accumulate(ia, std::move(da));
        if (nb) accumulate(ib, std::move(db));
        if (nc) accumulate(ic, std::move(dc));
      };
    }
    Var out = push(std::move(y), na || nb || nc, std::move(bp));
    return out;
  }

  std::vector<Node> nodes_;
};

/// Population variance of a set of scalar vars, built from graph ops.
inline Var scalar_variance(Tape& t, const std::vector<Var>& xs) {
  require(!xs.empty(), "ad::scalar_variance: empty input");
  Var sum = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) sum = t.add(sum, xs[i]);
  const double inv = 1.0 / static_cast<double>(xs.size());
  Var mean = t.scale(sum, inv);
  Var acc{};
  for (const Var& x : xs) {
    Var dev = t.sub(x, mean);
    Var sq = t.cwise_mul(dev, dev);
    acc = acc.valid() ? t.add(acc, sq) : sq;
  }
  return t.scale(acc, inv);
}

/// Cosine similarity between two tensors flattened to vectors.
inline Var cosine_similarity(Tape& t, Var a, Var b) {
  const double na = t.value(a).norm(), nb = t.value(b).norm();
  if (na <= 0.0 || nb <= 0.0) {
    throw DegenerateWeightsError(
        "cosine_similarity: zero-norm weight vector");
  }
  Var dot = t.sum_all(t.cwise_mul(a, b));
  Var qa = t.sum_all(t.cwise_mul(a, a));
  Var qb = t.sum_all(t.cwise_mul(b, b));
  Var denom = t.sqrt_eps(t.cwise_mul(qa, qb), 0.0);
  return t.cwise_div(dot, denom);
}

/// Power-mean sliced Wasserstein distance between two equal-size samples as a
/// differentiable graph: project, sort each direction, average |diff|^p.
/// Matches sliced_wasserstein_power for the same directions.
inline Var sliced_wasserstein_power_graph(Tape& t, Var a, Var b,
                                          const Matrix& directions,
                                          int order) {
  require(t.value(a).rows() == t.value(b).rows(),
          "ad::swd: sample sizes must match");
  Var dirs = t.constant(directions);
  Var pa = t.sort_columns(t.matmul(a, dirs));
  Var pb = t.sort_columns(t.matmul(b, dirs));
  return t.mean_all(t.abs_pow(t.sub(pa, pb), order));
}

/// Differentiable sliced Wasserstein correlation (power form, unclamped).
inline Var sliced_wasserstein_correlation_graph(Tape& t, Var x, Var y,
                                                const Matrix& directions,
                                                int order) {
  const int rows = static_cast<int>(t.value(x).rows());
  require(rows % 2 == 0 && rows >= 2, "ad::swc: even row count required");
  const int n = rows / 2;
  Var xh = t.slice_rows(x, 0, n), xt = t.slice_rows(x, n, n);
  Var yh = t.slice_rows(y, 0, n), yt = t.slice_rows(y, n, n);
  Var num = sliced_wasserstein_power_graph(t, t.concat_cols(xh, yh),
                                           t.concat_cols(xt, yh), directions,
                                           order);
  Var dxx = sliced_wasserstein_power_graph(t, t.concat_cols(xh, xh),
                                           t.concat_cols(xt, xh), directions,
                                           order);
  Var dyy = sliced_wasserstein_power_graph(t, t.concat_cols(yh, yh),
                                           t.concat_cols(yt, yh), directions,
                                           order);
  Var denom = t.sqrt_eps(t.cwise_mul(dxx, dyy), 1e-24);
  return t.cwise_div(num, denom);
}

}  // namespace knockoff::ad
