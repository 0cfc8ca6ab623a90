#pragma once

#include <cmath>
#include <vector>

#include "knockoff/common.hpp"

namespace knockoff {

/// Adam with decoupled weight decay: the decay acts directly on the weights,
/// not through the gradient moments.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Matrix>& params, const std::vector<Matrix>& grads) {
    require(params.size() == grads.size(), "AdamW: parameter/gradient count");
    if (m_.empty()) {
      for (const Matrix& p : params) {
        m_.push_back(Matrix::Zero(p.rows(), p.cols()));
        v_.push_back(Matrix::Zero(p.rows(), p.cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grads[k];
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grads[k].cwiseProduct(grads[k]);
      const Matrix mhat = m_[k] / bc1;
      const Matrix vhat = v_[k] / bc2;
      params[k] -=
          lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
      params[k] -= (lr_ * wd_) * params[k];
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace knockoff
