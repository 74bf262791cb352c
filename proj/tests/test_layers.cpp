#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "xfr/gradcheck.hpp"
#include "xfr/layers.hpp"

using namespace xfr;
using Catch::Approx;

namespace {

/// Direct quadruple-loop cross-correlation. Accumulates with std::fma in
/// ascending (ic, kh, kw) order from zero, bias added last, matching the
/// documented accumulation contract so results are comparable with ==.
template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& w,
                      const Tensor<T>& b, int stride, int pad) {
  const int B = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  Tensor<T> out({B, OC, OH, OW});
  for (int bi = 0; bi < B; ++bi)
    for (int oc = 0; oc < OC; ++oc)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          T acc = T(0);
          for (int ic = 0; ic < IC; ++ic)
            for (int kh = 0; kh < KH; ++kh)
              for (int kw = 0; kw < KW; ++kw) {
                const int ih = oh * stride - pad + kh;
                const int iw = ow * stride - pad + kw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc = std::fma(x.at({bi, ic, ih, iw}), w.at({oc, ic, kh, kw}),
                               acc);
              }
          out.at({bi, oc, oh, ow}) = acc + b.at({oc});
        }
  return out;
}

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return t;
}

template <typename T>
T dot_all(const Tensor<T>& a, const Tensor<T>& b) {
  T acc = T(0);
  for (int64_t i = 0; i < a.size(); ++i)
    acc += a.values()[static_cast<size_t>(i)] *
           b.values()[static_cast<size_t>(i)];
  return acc;
}

}  // namespace

TEST_CASE("conv2d identity and direct sums") {
  SECTION("1x1 unit kernel is the identity") {
    auto x = Tensor<float>::from({1, 1, 2, 2}, {1.f, -2.f, 3.f, 4.f});
    auto w = Tensor<float>::from({1, 1, 1, 1}, {1.f});
    Tensor<float> b({1});
    CHECK(conv2d(x, w, b, 1, 0).values() == x.values());
  }
  SECTION("all-ones 3x3 on all-ones 3x3 gives 9") {
    Tensor<float> x({1, 1, 3, 3}, 1.f);
    Tensor<float> w({1, 1, 3, 3}, 1.f);
    Tensor<float> b({1});
    auto y = conv2d(x, w, b, 1, 0);
    REQUIRE(y.size() == 1);
    CHECK(y.item() == 9.f);
  }
  SECTION("channel mismatch is rejected") {
    Tensor<float> x({1, 2, 4, 4});
    Tensor<float> w({1, 3, 3, 3});
    Tensor<float> b({1});
    CHECK_THROWS_AS(conv2d(x, w, b, 1, 0), std::invalid_argument);
  }
}

TEST_CASE("conv2d matches the quadruple-loop oracle exactly") {
  Rng rng(21);
  SECTION("random 1x2x5x5 instance") {
    auto x = random_tensor<float>(rng, {1, 2, 5, 5});
    auto w = random_tensor<float>(rng, {3, 2, 3, 3});
    auto b = random_tensor<float>(rng, {3});
    for (int stride : {1, 2})
      for (int pad : {0, 1}) {
        auto got = conv2d(x, w, b, stride, pad);
        auto want = conv_oracle(x, w, b, stride, pad);
        REQUIRE(got.shape() == want.shape());
        CHECK(got.values() == want.values());
      }
  }
  SECTION("geometry sweep") {
    for (int B : {1, 2})
      for (int IC : {1, 3})
        for (int H : {4, 7})
          for (int k : {1, 2, 3})
            for (int stride : {1, 2})
              for (int pad : {0, 1}) {
                if (H + 2 * pad < k) continue;
                auto x = random_tensor<float>(rng, {B, IC, H, H});
                auto w = random_tensor<float>(rng, {2, IC, k, k});
                auto b = random_tensor<float>(rng, {2});
                auto got = conv2d(x, w, b, stride, pad);
                auto want = conv_oracle(x, w, b, stride, pad);
                REQUIRE(got.shape() == want.shape());
                CHECK(got.values() == want.values());
              }
  }
}

TEST_CASE("tconv2d basics") {
  SECTION("1x1 unit kernel, stride 1 is the identity") {
    auto x = Tensor<float>::from({1, 1, 2, 2}, {5.f, -1.f, 0.5f, 2.f});
    auto w = Tensor<float>::from({1, 1, 1, 1}, {1.f});
    Tensor<float> b({1});
    CHECK(tconv2d(x, w, b, 1, 0).values() == x.values());
  }
  SECTION("single tap spreads through the kernel") {
    auto x = Tensor<float>::from({1, 1, 1, 1}, {3.f});
    Tensor<float> w({1, 1, 2, 2}, 1.f);
    Tensor<float> b({1});
    auto y = tconv2d(x, w, b, 2, 0);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.values() == std::vector<float>{3.f, 3.f, 3.f, 3.f});
  }
}

TEST_CASE("tconv2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, tconv(y)> with shared weights and geometry.
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const int ic = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int oc = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int k = 1 + static_cast<int>(rng.uniform_int(0, 3));
    const int stride = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const int pad = static_cast<int>(rng.uniform_int(0, 1));
    // Derive the conv input size from a target output size so the stride
    // divides evenly; otherwise the transposed shape cannot match.
    const int out = 2 + static_cast<int>(rng.uniform_int(0, 3));
    const int h = (out - 1) * stride - 2 * pad + k;
    if (h < k || h < 1) continue;

    auto x = random_tensor<double>(rng, {1, ic, h, h});
    auto w = random_tensor<double>(rng, {oc, ic, k, k});
    Tensor<double> zero_oc({oc});
    Tensor<double> zero_ic({ic});

    auto cx = conv2d(x, w, zero_oc, stride, pad);
    auto y = random_tensor<double>(rng, cx.shape());
    auto ty = tconv2d(y, w, zero_ic, stride, pad);
    REQUIRE(ty.shape() == x.shape());

    const double lhs = dot_all(cx, y);
    const double rhs = dot_all(x, ty);
    CHECK(lhs == Approx(rhs).epsilon(1e-9));
  }
}

TEST_CASE("global max pool") {
  SECTION("per-channel maxima with argmax routing") {
    auto x = Tensor<float>::from({1, 2, 2, 2},
                                 {1.f, 5.f, 3.f, 2.f,   // channel 0
                                  7.f, 7.f, 0.f, -1.f}); // channel 1, tie
    std::vector<int64_t> argmax;
    auto f = global_max_pool(x, &argmax);
    CHECK(f.values() == std::vector<float>{5.f, 7.f});
    CHECK(argmax == std::vector<int64_t>{1, 0});  // ties: lowest row-major
  }
  SECTION("constant channel") {
    Tensor<float> x({1, 1, 3, 3}, 4.5f);
    CHECK(global_max_pool(x).item() == 4.5f);
  }
  SECTION("backward puts 1 at each argmax, 0 elsewhere") {
    auto x = Tensor<double>::from({1, 2, 1, 2}, {1.0, 2.0, 9.0, 3.0});
    x.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(sum(global_max_pool(x)));
    CHECK(x.grad() == std::vector<double>{0, 1, 1, 0});
  }
  SECTION("value is invariant to spatial shuffles") {
    Rng rng(3);
    auto x = random_tensor<float>(rng, {1, 3, 4, 4});
    auto f = global_max_pool(x);
    // Reverse every channel spatially: same multiset of values.
    auto flipped = x.clone();
    for (int c = 0; c < 3; ++c) {
      float* ch = flipped.data() + c * 16;
      std::reverse(ch, ch + 16);
    }
    CHECK(global_max_pool(flipped).values() == f.values());
  }
}

TEST_CASE("parameter initialisation") {
  SECTION("bias is zero, weights reproducible per seed") {
    Conv2dLayer<float> a(3, 8, 3, 2, 1), b(3, 8, 3, 2, 1);
    init_parameters(a, uint64_t{42});
    init_parameters(b, uint64_t{42});
    CHECK(a.weight.values() == b.weight.values());
    for (float v : a.bias.values()) CHECK(v == 0.f);

    Conv2dLayer<float> c(3, 8, 3, 2, 1);
    init_parameters(c, uint64_t{43});
    CHECK(a.weight.values() != c.weight.values());
  }
  SECTION("spread matches the uniform law") {
    // stddev of U(-b, b) is b/sqrt(3); check the empirical moment.
    Conv2dLayer<double> l(4, 64, 5, 1, 0);  // 6400 weights
    init_parameters(l, uint64_t{7});
    REQUIRE(l.weight.size() >= 6400);
    const double bound = std::sqrt(1.0 / (4 * 5 * 5));
    double sq = 0.0;
    for (double v : l.weight.values()) sq += v * v;
    const double stddev = std::sqrt(sq / static_cast<double>(l.weight.size()));
    CHECK(stddev == Approx(bound / std::sqrt(3.0)).epsilon(0.05));
  }
}

TEST_CASE("layer gradients match finite differences") {
  gradcheck::Report r;
  r.name = "layers";
  Rng rng(77);
  for (int i = 0; i < 5; ++i) {
    gradcheck::check_into(
        r,
        [](const std::vector<Tensor<double>>& in) {
          auto y = conv2d(in[0], in[1], in[2], 2, 1);
          return sum(mul(y, y));
        },
        {gradcheck::detail::random_tensor(rng, {2, 2, 5, 5}),
         gradcheck::detail::random_tensor(rng, {3, 2, 3, 3}),
         gradcheck::detail::random_tensor(rng, {3})});
    gradcheck::check_into(
        r,
        [](const std::vector<Tensor<double>>& in) {
          auto y = tconv2d(in[0], in[1], in[2], 2, 1);
          return sum(mul(y, y));
        },
        {gradcheck::detail::random_tensor(rng, {2, 2, 3, 3}),
         gradcheck::detail::random_tensor(rng, {2, 3, 4, 4}),
         gradcheck::detail::random_tensor(rng, {3})});
  }
  INFO("max err " << r.max_err);
  CHECK(r.pass);
}
