#pragma once

#include <cmath>
#include <vector>

#include "xfr/tensor.hpp"

namespace xfr {

/// SGD with classical momentum: v = mu*v + g, p -= lr*v.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor<T>*> params, T lr, T momentum = T(0.9))
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    for (Tensor<T>* p : params_)
      velocity_.emplace_back(p->values().size(), T(0));
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }

  void step() {
    for (size_t k = 0; k < params_.size(); ++k) {
      Tensor<T>& p = *params_[k];
      if (!p.has_grad()) continue;
      const std::vector<T>& g = p.grad();
      std::vector<T>& v = velocity_[k];
      std::vector<T>& w = p.values();
      for (size_t i = 0; i < w.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i];
        w[i] -= lr_ * v[i];
      }
    }
  }

  void zero_grad() {
    for (Tensor<T>* p : params_) p->zero_grad();
  }

 private:
  std::vector<Tensor<T>*> params_;
  std::vector<std::vector<T>> velocity_;
  T lr_, momentum_;
};

/// Adam with bias correction. A zero gradient with zero moments yields an
/// exactly zero update.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>*> params, T lr, T beta1 = T(0.9),
       T beta2 = T(0.999), T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    for (Tensor<T>* p : params_) {
      m_.emplace_back(p->values().size(), T(0));
      v_.emplace_back(p->values().size(), T(0));
    }
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      Tensor<T>& p = *params_[k];
      if (!p.has_grad()) continue;
      const std::vector<T>& g = p.grad();
      std::vector<T>& m = m_[k];
      std::vector<T>& v = v_[k];
      std::vector<T>& w = p.values();
      for (size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (Tensor<T>* p : params_) p->zero_grad();
  }

 private:
  std::vector<Tensor<T>*> params_;
  std::vector<std::vector<T>> m_, v_;
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

/// Cosine decay from lr0 at epoch 0 toward 0 at `epochs`.
template <typename T>
T cosine_lr(T lr0, int epoch, int epochs) {
  if (epochs <= 1) return lr0;
  const double x = static_cast<double>(epoch) / static_cast<double>(epochs);
  return static_cast<T>(0.5 * (1.0 + std::cos(M_PI * x)) * lr0);
}

}  // namespace xfr
