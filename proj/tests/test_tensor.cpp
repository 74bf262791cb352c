#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "xfr/gradcheck.hpp"
#include "xfr/tensor.hpp"

using namespace xfr;
using Catch::Approx;

namespace {

template <typename T>
Tensor<T> vec(std::vector<T> v) {
  const int n = static_cast<int>(v.size());
  return Tensor<T>::from({n}, std::move(v));
}

}  // namespace

TEST_CASE("elementwise basics") {
  auto r = relu(vec<float>({-1.f, 0.f, 2.f}));
  CHECK(r.values() == std::vector<float>{0.f, 0.f, 2.f});

  auto a = abs(vec<float>({-0.5f, 0.3f}));
  CHECK(a.values() == std::vector<float>{0.5f, 0.3f});

  auto m = mul(vec<float>({1.f, 2.f, 3.f}), vec<float>({4.f, 5.f, 6.f}));
  CHECK(m.values() == std::vector<float>{4.f, 10.f, 18.f});

  auto s = add(vec<float>({1.f, 2.f}), 5.f);
  CHECK(s.values() == std::vector<float>{6.f, 7.f});
}

TEST_CASE("elementwise errors") {
  CHECK_THROWS_AS(add(vec<float>({1.f, 2.f}), vec<float>({1.f, 2.f, 3.f})),
                  std::invalid_argument);
  CHECK_THROWS_AS(div(vec<float>({1.f}), vec<float>({0.f})),
                  std::invalid_argument);
  // Non-finite results surface as errors rather than propagating.
  CHECK_THROWS_AS(exp(vec<float>({1000.f})), std::runtime_error);
  CHECK_THROWS_AS(log(vec<float>({0.f})), std::runtime_error);
}

TEST_CASE("reductions") {
  auto m = Tensor<float>::from({2, 2}, {1.f, 2.f, 3.f, 4.f});
  CHECK(sum(m).item() == 10.f);
  CHECK(mean(vec<float>({2.f, 4.f})).item() == 3.f);

  int64_t argmax = -1;
  auto mx = max_all(Tensor<float>::from({2, 2}, {1.f, 5.f, 3.f, 2.f}), &argmax);
  CHECK(mx.item() == 5.f);
  CHECK(argmax == 1);  // row-major position (0,1)

  // Ties resolve to the lowest row-major index.
  auto tied = Tensor<float>::from({2, 2}, {7.f, 7.f, 7.f, 7.f});
  max_all(tied, &argmax);
  CHECK(argmax == 0);

  auto rows = reduce_sum(m, {0});
  CHECK(rows.values() == std::vector<float>{4.f, 6.f});
  CHECK_THROWS_AS(reduce_sum(m, {2}), std::invalid_argument);
}

TEST_CASE("backward on simple graphs") {
  SECTION("d/dx sum(x*x) = 2x") {
    auto x = vec<double>({1.0, 2.0});
    x.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(sum(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{2.0, 4.0});
  }
  SECTION("relu subgradient is zero on the negative side") {
    auto x = vec<double>({-1.0, 3.0});
    x.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(sum(relu(x)));
    CHECK(x.grad() == std::vector<double>{0.0, 1.0});
  }
  SECTION("gradients accumulate across multiple uses") {
    auto x = vec<double>({1.5});
    x.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(sum(add(x, x)));
    CHECK(x.grad()[0] == 2.0);
  }
}

TEST_CASE("backward error conditions") {
  auto x = vec<double>({1.0, 2.0});
  x.set_requires_grad(true);

  SECTION("non-scalar root") {
    Tape<double> tape;
    auto y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  }
  SECTION("root not recorded") {
    Tape<double> tape;
    CHECK_THROWS_AS(tape.backward(Tensor<double>::scalar(1.0)),
                    std::invalid_argument);
  }
  SECTION("tape consumed twice") {
    Tape<double> tape;
    auto y = sum(mul(x, x));
    tape.backward(y);
    CHECK_THROWS_AS(tape.backward(y), std::runtime_error);
  }
}

TEST_CASE("random op chains match finite differences") {
  // Independent oracle: central differences on the forward path only.
  Rng rng(99);
  gradcheck::Report r;
  r.name = "chains";
  for (int i = 0; i < 20; ++i) {
    auto a = gradcheck::detail::random_tensor(rng, {2, 3});
    auto b = gradcheck::detail::random_away_from_zero(rng, {2, 3}, 0.3);
    gradcheck::check_into(
        r,
        [](const std::vector<Tensor<double>>& in) {
          return sum(mul(tanh(div(in[0], in[1])), exp(in[0])));
        },
        {a, b});
  }
  INFO("max err " << r.max_err);
  CHECK(r.pass);
}

TEST_CASE("backward is linear in the loss") {
  auto x = vec<double>({0.3, -0.7, 1.2});

  auto grad_of = [&](double a, double b) {
    auto xc = x.clone();
    xc.set_requires_grad(true);
    Tape<double> tape;
    auto f = sum(mul(xc, xc));
    auto g = sum(exp(xc));
    tape.backward(add(mul(f, a), mul(g, b)));
    return xc.grad();
  };

  auto gf = grad_of(1.0, 0.0);
  auto gg = grad_of(0.0, 1.0);
  auto combo = grad_of(2.5, -1.5);
  for (size_t i = 0; i < combo.size(); ++i)
    CHECK(combo[i] == Approx(2.5 * gf[i] - 1.5 * gg[i]).epsilon(1e-12));
}

TEST_CASE("matmul and friends") {
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(a, b).values() == std::vector<double>{19, 22, 43, 50});
  CHECK(transpose2d(a).values() == std::vector<double>{1, 3, 2, 4});
  CHECK_THROWS_AS(matmul(a, Tensor<double>({3, 2})), std::invalid_argument);

  auto n = l2_normalize_rows(Tensor<double>::from({1, 2}, {3, 4}));
  CHECK(n.values()[0] == Approx(0.6));
  CHECK(n.values()[1] == Approx(0.8));
  CHECK_THROWS_AS(l2_normalize_rows(Tensor<double>({2, 2})),
                  std::invalid_argument);

  auto ce = softmax_cross_entropy(Tensor<double>::from({1, 2}, {0, 0}), {0});
  CHECK(ce.item() == Approx(std::log(2.0)));
}

TEST_CASE("ops are deterministic") {
  Rng rng(5);
  auto x = gradcheck::detail::random_tensor(rng, {4, 4});
  auto run = [&] {
    return sum(mul(tanh(x), exp(mul(x, 0.5)))).item();
  };
  const double first = run();
  for (int i = 0; i < 5; ++i) CHECK(run() == first);
}

TEST_CASE("no recording without a tape") {
  auto x = vec<double>({1.0});
  x.set_requires_grad(true);
  auto y = mul(x, x);  // no active tape
  CHECK_FALSE(y.requires_grad());
}
