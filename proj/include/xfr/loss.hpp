#pragma once

#include <cmath>
#include <vector>

#include "xfr/model.hpp"
#include "xfr/tensor.hpp"

namespace xfr {

template <typename T>
struct LossConfig {
  T lambda = T(1);   // reconstruction trade-off weight
  T margin = T(0.5); // additive angular margin, radians
  T scale = T(30);   // logit scale

  void validate() const {
    if (lambda < T(0)) throw std::invalid_argument("loss: lambda < 0");
    if (margin < T(0) || margin >= T(M_PI / 2))
      throw std::invalid_argument("loss: margin outside [0, pi/2)");
    if (scale <= T(0)) throw std::invalid_argument("loss: scale <= 0");
  }
};

/// Applies the additive angular margin to the true-class entries of a
/// cosine matrix: out[i][y_i] = cos(acos(c) + m), other entries pass
/// through. Cosines are clamped to [-1+1e-7, 1-1e-7] first because the
/// derivative of acos diverges at the endpoints; outside the clamp range
/// the local gradient is zero.
template <typename T>
Tensor<T> cos_margin_adjust(const Tensor<T>& cosines,
                            const std::vector<int>& labels, T margin) {
  if (cosines.rank() != 2)
    throw std::invalid_argument("cos_margin_adjust: rank != 2");
  const int m = cosines.dim(0), n = cosines.dim(1);
  if (static_cast<int>(labels.size()) != m)
    throw std::invalid_argument("cos_margin_adjust: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= n)
      throw std::invalid_argument("cos_margin_adjust: label out of range");

  const T lo = T(-1) + T(1e-7), hi = T(1) - T(1e-7);
  const T cos_m = std::cos(margin), sin_m = std::sin(margin);
  Tensor<T> out = cosines.clone();
  out.set_requires_grad(false);
  std::vector<T> dtrue(static_cast<size_t>(m));  // d out / d cos at true class
  for (int i = 0; i < m; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    const T c = cosines.data()[i * n + y];
    const T t = c < lo ? lo : (c > hi ? hi : c);
    const T s = std::sqrt(T(1) - t * t);
    out.data()[i * n + y] = t * cos_m - s * sin_m;
    dtrue[static_cast<size_t>(i)] =
        (c < lo || c > hi) ? T(0) : cos_m + t * sin_m / s;
  }
  detail::ensure_finite(out, "cos_margin_adjust");

  const bool rec = detail::tape_should_record<T>(cosines.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=, d = std::move(dtrue)]() mutable {
      const std::vector<T>& g = out.grad();
      std::vector<T>& gc = cosines.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const bool true_class = j == labels[static_cast<size_t>(i)];
          gc[i * n + j] +=
              g[i * n + j] * (true_class ? d[static_cast<size_t>(i)] : T(1));
        }
    });
  }
  return out;
}

/// Additive-angular-margin softmax loss over L2-normalised features and
/// class weights: true-class logit s*cos(theta_y + m), others s*cos(theta_j),
/// then mean softmax cross-entropy.
template <typename T>
Tensor<T> arcface_loss(const Tensor<T>& features, const Tensor<T>& head_weight,
                       const std::vector<int>& labels,
                       const LossConfig<T>& cfg) {
  cfg.validate();
  if (features.rank() != 2 || head_weight.rank() != 2 ||
      features.dim(1) != head_weight.dim(1))
    throw std::invalid_argument("arcface_loss: feature/head shape mismatch");
  Tensor<T> fn = l2_normalize_rows(features);
  Tensor<T> wn = l2_normalize_rows(head_weight);
  Tensor<T> cosines = matmul(fn, transpose2d(wn));
  Tensor<T> adjusted = cos_margin_adjust(cosines, labels, cfg.margin);
  Tensor<T> logits = mul(adjusted, cfg.scale);
  return softmax_cross_entropy(logits, labels);
}

/// Mean squared error over all elements.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& recon, const Tensor<T>& target) {
  if (recon.shape() != target.shape())
    throw std::invalid_argument("mse_loss: shape mismatch " +
                                shape_str(recon.shape()) + " vs " +
                                shape_str(target.shape()));
  Tensor<T> d = sub(recon, target);
  return mean(mul(d, d));
}

/// Joint objective: identity loss plus lambda times reconstruction loss.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_id, const Tensor<T>& l_rec, T lambda) {
  return add(l_id, mul(l_rec, lambda));
}

}  // namespace xfr
