#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "xfr/tensor.hpp"

namespace xfr {

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline int tconv_out_dim(int in, int k, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + k;
}

/// Valid kernel-tap range [lo, hi) for one output coordinate of a strided
/// cross-correlation with zero padding.
inline std::pair<int, int> tap_range(int o, int stride, int pad, int k,
                                     int in) {
  const int base = o * stride - pad;
  const int lo = base < 0 ? -base : 0;
  int hi = in - base;
  if (hi > k) hi = k;
  return {lo, hi < lo ? lo : hi};
}

/// For transposed convolution, the (kernel, input) index pairs feeding one
/// output coordinate, in ascending kernel order.
inline std::vector<std::pair<int, int>> tconv_taps(int o, int stride, int pad,
                                                   int k, int in) {
  std::vector<std::pair<int, int>> taps;
  for (int kk = 0; kk < k; ++kk) {
    const int num = o + pad - kk;
    if (num < 0) break;
    if (num % stride != 0) continue;
    const int i = num / stride;
    if (i < in) taps.emplace_back(kk, i);
  }
  return taps;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: strided cross-correlation with zero padding
// ---------------------------------------------------------------------------

/// x: (batch, in_ch, h, w), weight: (out_ch, in_ch, kh, kw), bias: (out_ch).
/// Each output element accumulates with std::fma in ascending
/// (in_ch, kh, kw) order starting from zero, then adds the bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int padding) {
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1)
    throw std::invalid_argument("conv2d: expected 4d input, 4d weight, 1d bias");
  if (stride < 1 || padding < 0)
    throw std::invalid_argument("conv2d: bad stride/padding");
  const int B = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OC = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  if (weight.dim(1) != IC)
    throw std::invalid_argument("conv2d: channel mismatch: input has " +
                                std::to_string(IC) + ", weight expects " +
                                std::to_string(weight.dim(1)));
  if (bias.dim(0) != OC) throw std::invalid_argument("conv2d: bias size");
  const int OH = detail::conv_out_dim(H, KH, stride, padding);
  const int OW = detail::conv_out_dim(W, KW, stride, padding);
  if (OH < 1 || OW < 1)
    throw std::invalid_argument("conv2d: empty output for input " +
                                shape_str(x.shape()));

  Tensor<T> out({B, OC, OH, OW});
  const T* px = x.data();
  const T* pw = weight.data();
  const T* pb = bias.data();
  T* po = out.data();

  parallel_for(static_cast<int64_t>(B) * OC, [&](int64_t lo, int64_t hi) {
    for (int64_t bo = lo; bo < hi; ++bo) {
      const int b = static_cast<int>(bo / OC);
      const int oc = static_cast<int>(bo % OC);
      const T* wbase = pw + static_cast<int64_t>(oc) * IC * KH * KW;
      const T bv = pb[oc];
      T* obase = po + (bo * OH) * OW;
      for (int oh = 0; oh < OH; ++oh) {
        const auto [kh_lo, kh_hi] = detail::tap_range(oh, stride, padding, KH, H);
        for (int ow = 0; ow < OW; ++ow) {
          const auto [kw_lo, kw_hi] =
              detail::tap_range(ow, stride, padding, KW, W);
          T acc = T(0);
          for (int ic = 0; ic < IC; ++ic) {
            const T* xc = px + ((static_cast<int64_t>(b) * IC + ic) * H) * W;
            const T* wc = wbase + (static_cast<int64_t>(ic) * KH) * KW;
            for (int kh = kh_lo; kh < kh_hi; ++kh) {
              const int ih = oh * stride - padding + kh;
              const T* xrow = xc + static_cast<int64_t>(ih) * W;
              const T* wrow = wc + static_cast<int64_t>(kh) * KW;
              const int iw0 = ow * stride - padding;
              for (int kw = kw_lo; kw < kw_hi; ++kw)
                acc = std::fma(xrow[iw0 + kw], wrow[kw], acc);
            }
          }
          obase[static_cast<int64_t>(oh) * OW + ow] = acc + bv;
        }
      }
    }
  });
  detail::ensure_finite(out, "conv2d");

  const bool rec = detail::tape_should_record<T>(
      x.requires_grad() || weight.requires_grad() || bias.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=]() mutable {
      const std::vector<T>& g = out.grad();
      if (x.requires_grad()) {
        std::vector<T>& gx = x.grad();
        parallel_for(B, [&](int64_t blo, int64_t bhi) {
          for (int64_t b = blo; b < bhi; ++b)
            for (int oc = 0; oc < OC; ++oc) {
              const T* wbase = pw + static_cast<int64_t>(oc) * IC * KH * KW;
              for (int oh = 0; oh < OH; ++oh) {
                const auto [kh_lo, kh_hi] =
                    detail::tap_range(oh, stride, padding, KH, H);
                for (int ow = 0; ow < OW; ++ow) {
                  const auto [kw_lo, kw_hi] =
                      detail::tap_range(ow, stride, padding, KW, W);
                  const T gv =
                      g[((b * OC + oc) * OH + oh) * OW + ow];
                  if (gv == T(0)) continue;
                  for (int ic = 0; ic < IC; ++ic) {
                    T* xg = gx.data() + ((b * IC + ic) * H) * W;
                    const T* wc = wbase + (static_cast<int64_t>(ic) * KH) * KW;
                    for (int kh = kh_lo; kh < kh_hi; ++kh) {
                      const int ih = oh * stride - padding + kh;
                      const int iw0 = ow * stride - padding;
                      for (int kw = kw_lo; kw < kw_hi; ++kw)
                        xg[static_cast<int64_t>(ih) * W + iw0 + kw] =
                            std::fma(gv, wc[kh * KW + kw],
                                     xg[static_cast<int64_t>(ih) * W + iw0 + kw]);
                    }
                  }
                }
              }
            }
        });
      }
      if (weight.requires_grad()) {
        std::vector<T>& gw = weight.grad();
        parallel_for(OC, [&](int64_t olo, int64_t ohi) {
          for (int64_t oc = olo; oc < ohi; ++oc) {
            T* wg = gw.data() + oc * IC * KH * KW;
            for (int b = 0; b < B; ++b)
              for (int oh = 0; oh < OH; ++oh) {
                const auto [kh_lo, kh_hi] =
                    detail::tap_range(oh, stride, padding, KH, H);
                for (int ow = 0; ow < OW; ++ow) {
                  const auto [kw_lo, kw_hi] =
                      detail::tap_range(ow, stride, padding, KW, W);
                  const T gv = g[((static_cast<int64_t>(b) * OC + oc) * OH + oh) *
                                     OW + ow];
                  if (gv == T(0)) continue;
                  for (int ic = 0; ic < IC; ++ic) {
                    const T* xc =
                        px + ((static_cast<int64_t>(b) * IC + ic) * H) * W;
                    for (int kh = kh_lo; kh < kh_hi; ++kh) {
                      const int ih = oh * stride - padding + kh;
                      const int iw0 = ow * stride - padding;
                      for (int kw = kw_lo; kw < kw_hi; ++kw)
                        wg[(static_cast<int64_t>(ic) * KH + kh) * KW + kw] =
                            std::fma(gv, xc[static_cast<int64_t>(ih) * W + iw0 + kw],
                                     wg[(static_cast<int64_t>(ic) * KH + kh) * KW +
                                        kw]);
                    }
                  }
                }
              }
          }
        });
      }
      if (bias.requires_grad()) {
        std::vector<T>& gb = bias.grad();
        for (int oc = 0; oc < OC; ++oc) {
          T acc = T(0);
          for (int b = 0; b < B; ++b)
            for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i)
              acc += g[((static_cast<int64_t>(b) * OC + oc) * OH) * OW + i];
          gb[oc] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// tconv2d: transposed convolution (adjoint of conv2d with equal geometry)
// ---------------------------------------------------------------------------

/// x: (batch, in_ch, h, w), weight: (in_ch, out_ch, kh, kw), bias: (out_ch).
/// Output spatial dims are (in-1)*stride - 2*padding + k. Computed as a
/// gather over precomputed tap tables so each output element is owned by
/// one loop iteration.
template <typename T>
Tensor<T> tconv2d(const Tensor<T>& x, const Tensor<T>& weight,
                  const Tensor<T>& bias, int stride, int padding) {
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1)
    throw std::invalid_argument(
        "tconv2d: expected 4d input, 4d weight, 1d bias");
  if (stride < 1 || padding < 0)
    throw std::invalid_argument("tconv2d: bad stride/padding");
  const int B = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OC = weight.dim(1), KH = weight.dim(2), KW = weight.dim(3);
  if (weight.dim(0) != IC)
    throw std::invalid_argument("tconv2d: channel mismatch: input has " +
                                std::to_string(IC) + ", weight expects " +
                                std::to_string(weight.dim(0)));
  if (bias.dim(0) != OC) throw std::invalid_argument("tconv2d: bias size");
  const int OH = detail::tconv_out_dim(H, KH, stride, padding);
  const int OW = detail::tconv_out_dim(W, KW, stride, padding);
  if (OH < 1 || OW < 1)
    throw std::invalid_argument("tconv2d: empty output");

  std::vector<std::vector<std::pair<int, int>>> taps_h(static_cast<size_t>(OH));
  std::vector<std::vector<std::pair<int, int>>> taps_w(static_cast<size_t>(OW));
  for (int oh = 0; oh < OH; ++oh)
    taps_h[static_cast<size_t>(oh)] = detail::tconv_taps(oh, stride, padding, KH, H);
  for (int ow = 0; ow < OW; ++ow)
    taps_w[static_cast<size_t>(ow)] = detail::tconv_taps(ow, stride, padding, KW, W);

  Tensor<T> out({B, OC, OH, OW});
  const T* px = x.data();
  const T* pw = weight.data();
  const T* pb = bias.data();
  T* po = out.data();

  parallel_for(static_cast<int64_t>(B) * OC, [&](int64_t lo, int64_t hi) {
    for (int64_t bo = lo; bo < hi; ++bo) {
      const int b = static_cast<int>(bo / OC);
      const int oc = static_cast<int>(bo % OC);
      T* obase = po + (bo * OH) * OW;
      for (int oh = 0; oh < OH; ++oh) {
        const auto& th = taps_h[static_cast<size_t>(oh)];
        for (int ow = 0; ow < OW; ++ow) {
          const auto& tw = taps_w[static_cast<size_t>(ow)];
          T acc = T(0);
          for (int ic = 0; ic < IC; ++ic) {
            const T* xc = px + ((static_cast<int64_t>(b) * IC + ic) * H) * W;
            const T* wc = pw + ((static_cast<int64_t>(ic) * OC + oc) * KH) * KW;
            for (const auto& [kh, ih] : th) {
              const T* xrow = xc + static_cast<int64_t>(ih) * W;
              const T* wrow = wc + static_cast<int64_t>(kh) * KW;
              for (const auto& [kw, iw] : tw)
                acc = std::fma(xrow[iw], wrow[kw], acc);
            }
          }
          obase[static_cast<int64_t>(oh) * OW + ow] = acc + pb[oc];
        }
      }
    }
  });
  detail::ensure_finite(out, "tconv2d");

  const bool rec = detail::tape_should_record<T>(
      x.requires_grad() || weight.requires_grad() || bias.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=]() mutable {
      const std::vector<T>& g = out.grad();
      if (x.requires_grad()) {
        // dx is a plain strided correlation of g with the kernel.
        std::vector<T>& gx = x.grad();
        parallel_for(static_cast<int64_t>(B) * IC, [&](int64_t lo, int64_t hi) {
          for (int64_t bi = lo; bi < hi; ++bi) {
            const int b = static_cast<int>(bi / IC);
            const int ic = static_cast<int>(bi % IC);
            T* xg = gx.data() + (bi * H) * W;
            for (int h = 0; h < H; ++h)
              for (int w = 0; w < W; ++w) {
                T acc = T(0);
                for (int oc = 0; oc < OC; ++oc) {
                  const T* gc =
                      g.data() + ((static_cast<int64_t>(b) * OC + oc) * OH) * OW;
                  const T* wc =
                      pw + ((static_cast<int64_t>(ic) * OC + oc) * KH) * KW;
                  for (int kh = 0; kh < KH; ++kh) {
                    const int oh = h * stride - padding + kh;
                    if (oh < 0 || oh >= OH) continue;
                    for (int kw = 0; kw < KW; ++kw) {
                      const int ow = w * stride - padding + kw;
                      if (ow < 0 || ow >= OW) continue;
                      acc = std::fma(gc[static_cast<int64_t>(oh) * OW + ow],
                                     wc[kh * KW + kw], acc);
                    }
                  }
                }
                xg[static_cast<int64_t>(h) * W + w] += acc;
              }
          }
        });
      }
      if (weight.requires_grad()) {
        std::vector<T>& gw = weight.grad();
        parallel_for(IC, [&](int64_t ilo, int64_t ihi) {
          for (int64_t ic = ilo; ic < ihi; ++ic) {
            for (int b = 0; b < B; ++b) {
              const T* xc = px + ((static_cast<int64_t>(b) * IC + ic) * H) * W;
              for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                  const T xv = xc[static_cast<int64_t>(h) * W + w];
                  if (xv == T(0)) continue;
                  for (int oc = 0; oc < OC; ++oc) {
                    const T* gc = g.data() +
                                  ((static_cast<int64_t>(b) * OC + oc) * OH) * OW;
                    T* wg = gw.data() + ((ic * OC + oc) * KH) * KW;
                    for (int kh = 0; kh < KH; ++kh) {
                      const int oh = h * stride - padding + kh;
                      if (oh < 0 || oh >= OH) continue;
                      for (int kw = 0; kw < KW; ++kw) {
                        const int ow = w * stride - padding + kw;
                        if (ow < 0 || ow >= OW) continue;
                        wg[kh * KW + kw] =
                            std::fma(xv, gc[static_cast<int64_t>(oh) * OW + ow],
                                     wg[kh * KW + kw]);
                      }
                    }
                  }
                }
            }
          }
        });
      }
      if (bias.requires_grad()) {
        std::vector<T>& gb = bias.grad();
        for (int oc = 0; oc < OC; ++oc) {
          T acc = T(0);
          for (int b = 0; b < B; ++b)
            for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i)
              acc += g[((static_cast<int64_t>(b) * OC + oc) * OH) * OW + i];
          gb[oc] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Global max pooling
// ---------------------------------------------------------------------------

/// (batch, c, h, w) -> (batch, c) per-channel spatial maximum. The backward
/// pass routes the gradient only to the winning location; ties go to the
/// lowest row-major index. argmax_out, if given, receives the flat spatial
/// index of the winner per (batch, channel).
template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x,
                          std::vector<int64_t>* argmax_out = nullptr) {
  if (x.rank() != 4) throw std::invalid_argument("global_max_pool: rank != 4");
  const int B = x.dim(0), C = x.dim(1);
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out({B, C});
  std::vector<int64_t> argmax(static_cast<size_t>(B) * C);
  const T* px = x.data();
  T* po = out.data();
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    const T* ch = px + bc * hw;
    T best = ch[0];
    int64_t at = 0;
    for (int64_t i = 1; i < hw; ++i)
      if (ch[i] > best) {
        best = ch[i];
        at = i;
      }
    po[bc] = best;
    argmax[static_cast<size_t>(bc)] = at;
  }

  const bool rec = detail::tape_should_record<T>(x.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=, am = argmax]() mutable {
      const std::vector<T>& g = out.grad();
      std::vector<T>& gx = x.grad();
      for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc)
        gx[bc * hw + am[static_cast<size_t>(bc)]] += g[bc];
    });
  }
  if (argmax_out) *argmax_out = std::move(argmax);
  return out;
}

// ---------------------------------------------------------------------------
// Layer records
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
  Tensor<T> weight;  // (out_ch, in_ch, kh, kw)
  Tensor<T> bias;    // (out_ch)
  int stride = 1;
  int padding = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int in_ch, int out_ch, int k, int stride_, int padding_)
      : weight(Tensor<T>({out_ch, in_ch, k, k}, T(0), true)),
        bias(Tensor<T>({out_ch}, T(0), true)),
        stride(stride_),
        padding(padding_) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, stride, padding);
  }
  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }
};

template <typename T>
struct TConv2dLayer {
  Tensor<T> weight;  // (in_ch, out_ch, kh, kw)
  Tensor<T> bias;    // (out_ch)
  int stride = 1;
  int padding = 0;

  TConv2dLayer() = default;
  TConv2dLayer(int in_ch, int out_ch, int k, int stride_, int padding_)
      : weight(Tensor<T>({in_ch, out_ch, k, k}, T(0), true)),
        bias(Tensor<T>({out_ch}, T(0), true)),
        stride(stride_),
        padding(padding_) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return tconv2d(x, weight, bias, stride, padding);
  }
  int in_channels() const { return weight.dim(0); }
  int out_channels() const { return weight.dim(1); }
};

namespace detail {

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double bound) {
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace detail

/// Weights uniform in (-b, b) with b = sqrt(1 / (in_ch * kh * kw)); bias zero.
template <typename T>
void init_parameters(Conv2dLayer<T>& layer, Rng& rng) {
  const double fan_in = static_cast<double>(layer.weight.dim(1)) *
                        layer.weight.dim(2) * layer.weight.dim(3);
  detail::fill_uniform(layer.weight, rng, std::sqrt(1.0 / fan_in));
  std::fill(layer.bias.values().begin(), layer.bias.values().end(), T(0));
}

template <typename T>
void init_parameters(TConv2dLayer<T>& layer, Rng& rng) {
  const double fan_in = static_cast<double>(layer.weight.dim(0)) *
                        layer.weight.dim(2) * layer.weight.dim(3);
  detail::fill_uniform(layer.weight, rng, std::sqrt(1.0 / fan_in));
  std::fill(layer.bias.values().begin(), layer.bias.values().end(), T(0));
}

template <typename Layer>
void init_parameters(Layer& layer, uint64_t seed) {
  Rng rng(seed);
  init_parameters(layer, rng);
}

}  // namespace xfr
