#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfr/layers.hpp"
#include "xfr/tensor.hpp"

namespace xfr {

/// Network geometry. The encoder is four stride-2 conv blocks; the decoder
/// mirrors the first three encoder widths and ends at img_ch. With the
/// defaults a 64x64 input maps to a (128, 4, 4) feature map.
struct ModelArch {
  int img_ch = 1;
  int input_size = 64;
  std::vector<int> encoder_widths = {32, 64, 128, 128};
  int enc_kernel = 3, enc_stride = 2, enc_padding = 1;
  int dec_kernel = 4, dec_stride = 2, dec_padding = 1;
  int num_identities = 0;

  int feature_channels() const { return encoder_widths.back(); }
  int feature_size() const { return input_size / 16; }

  std::vector<int> decoder_widths() const {
    return {encoder_widths[2], encoder_widths[1], encoder_widths[0], img_ch};
  }

  void validate() const {
    if (img_ch != 1 && img_ch != 3)
      throw std::invalid_argument("arch: img_ch must be 1 or 3");
    if (input_size < 16 || input_size % 16 != 0)
      throw std::invalid_argument("arch: input_size must be a multiple of 16");
    if (encoder_widths.size() != 4)
      throw std::invalid_argument("arch: encoder needs exactly 4 widths");
    for (int w : encoder_widths)
      if (w < 1) throw std::invalid_argument("arch: non-positive width");
    if (num_identities < 0)
      throw std::invalid_argument("arch: negative identity count");
  }

  bool operator==(const ModelArch&) const = default;
};

/// Feature pair for one batch: the spatial map C (batch, c, s, s) and the
/// pooled vector F (batch, c), where F[i] is the spatial max of channel i.
template <typename T>
struct FeatureBundle {
  Tensor<T> C;
  Tensor<T> F;
};

template <typename T>
struct TwoStreamModel {
  ModelArch arch;
  std::vector<Conv2dLayer<T>> encoder;   // conv -> relu, stride 2, x4
  std::vector<TConv2dLayer<T>> decoder;  // tconv (+relu between), tanh out
  Tensor<T> head_weight;                 // (num_identities, c), training only

  static TwoStreamModel build(const ModelArch& arch, uint64_t seed) {
    arch.validate();
    TwoStreamModel m;
    m.arch = arch;
    Rng rng(seed);
    int in_ch = arch.img_ch;
    for (int w : arch.encoder_widths) {
      m.encoder.emplace_back(in_ch, w, arch.enc_kernel, arch.enc_stride,
                             arch.enc_padding);
      init_parameters(m.encoder.back(), rng);
      in_ch = w;
    }
    for (int w : arch.decoder_widths()) {
      m.decoder.emplace_back(in_ch, w, arch.dec_kernel, arch.dec_stride,
                             arch.dec_padding);
      init_parameters(m.decoder.back(), rng);
      in_ch = w;
    }
    if (arch.num_identities > 0) {
      m.head_weight = Tensor<T>({arch.num_identities, arch.feature_channels()},
                                T(0), true);
      const double b = std::sqrt(1.0 / arch.feature_channels());
      for (T& v : m.head_weight.values())
        v = static_cast<T>(rng.uniform(-b, b));
    }
    return m;
  }

  /// images: (batch, img_ch, n, n) with values in [-1, 1].
  FeatureBundle<T> encode(const Tensor<T>& images) const {
    check_input(images);
    Tensor<T> h = images;
    for (const auto& layer : encoder) h = relu(layer.forward(h));
    Tensor<T> f = global_max_pool(h);
    return {h, f};
  }

  /// C: (batch, c, s, s) -> image batch in [-1, 1].
  Tensor<T> reconstruct(const Tensor<T>& feature_map) const {
    const int c = arch.feature_channels(), s = arch.feature_size();
    if (feature_map.rank() != 4 || feature_map.dim(1) != c ||
        feature_map.dim(2) != s || feature_map.dim(3) != s)
      throw std::invalid_argument("reconstruct: feature map shape " +
                                  shape_str(feature_map.shape()) +
                                  ", expected (*," + std::to_string(c) + "," +
                                  std::to_string(s) + "," + std::to_string(s) +
                                  ")");
    Tensor<T> h = feature_map;
    for (size_t i = 0; i < decoder.size(); ++i) {
      h = decoder[i].forward(h);
      h = (i + 1 < decoder.size()) ? relu(h) : tanh(h);
    }
    return h;
  }

  std::vector<Tensor<T>*> encoder_parameters() {
    std::vector<Tensor<T>*> ps;
    for (auto& l : encoder) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    return ps;
  }

  std::vector<Tensor<T>*> decoder_parameters() {
    std::vector<Tensor<T>*> ps;
    for (auto& l : decoder) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    return ps;
  }

  /// Every parameter in declared order: encoder, decoder, head.
  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> ps = encoder_parameters();
    for (auto* p : decoder_parameters()) ps.push_back(p);
    if (head_weight.defined()) ps.push_back(&head_weight);
    return ps;
  }

  template <typename U>
  TwoStreamModel<U> cast() const {
    TwoStreamModel<U> m;
    m.arch = arch;
    for (const auto& l : encoder) {
      Conv2dLayer<U> lu;
      lu.weight = l.weight.template cast<U>();
      lu.bias = l.bias.template cast<U>();
      lu.stride = l.stride;
      lu.padding = l.padding;
      m.encoder.push_back(std::move(lu));
    }
    for (const auto& l : decoder) {
      TConv2dLayer<U> lu;
      lu.weight = l.weight.template cast<U>();
      lu.bias = l.bias.template cast<U>();
      lu.stride = l.stride;
      lu.padding = l.padding;
      m.decoder.push_back(std::move(lu));
    }
    if (head_weight.defined())
      m.head_weight = head_weight.template cast<U>();
    return m;
  }

 private:
  void check_input(const Tensor<T>& images) const {
    if (images.rank() != 4 || images.dim(1) != arch.img_ch ||
        images.dim(2) != arch.input_size || images.dim(3) != arch.input_size)
      throw std::invalid_argument(
          "encode: input shape " + shape_str(images.shape()) + ", expected (*," +
          std::to_string(arch.img_ch) + "," + std::to_string(arch.input_size) +
          "," + std::to_string(arch.input_size) + ")");
    for (T v : images.values())
      if (v < T(-1) - T(1e-5) || v > T(1) + T(1e-5))
        throw std::invalid_argument("encode: input values outside [-1, 1]");
  }
};

}  // namespace xfr
