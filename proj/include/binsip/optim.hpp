// SPDX-License-Identifier: Apache-2.0
//
// Adam with bias correction.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "binsip/common.hpp"
#include "binsip/tensor.hpp"

namespace binsip::ag {

class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr = 2e-4, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].value().size(), 0.0);
      v_[i].assign(params_[i].value().size(), 0.0);
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto& grad = p.grad();
      auto& value = p.value();
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = grad[j];
        if (!std::isfinite(g))
          throw NumericError("Adam: non-finite gradient in parameter '" +
                             (p.name().empty() ? "<unnamed>" : p.name()) + "'");
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) {
      auto& g = p.grad();
      std::fill(g.begin(), g.end(), 0.0);
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace binsip::ag
