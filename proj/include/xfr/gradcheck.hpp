#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xfr/layers.hpp"
#include "xfr/loss.hpp"
#include "xfr/tensor.hpp"

namespace xfr::gradcheck {

struct Report {
  std::string name;
  int instances = 0;
  int64_t checks = 0;
  double max_err = 0.0;
  bool pass = true;
};

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

/// Compares reverse-mode gradients of a scalar-valued function against
/// central finite differences at 64-bit precision. The forward path is the
/// only thing the difference quotient touches, so it is independent of
/// every backward rule it checks. Error metric per element:
/// |ad - fd| / max(1, |ad|, |fd|).
template <typename Fn>
void check_into(Report& report, Fn&& fn, std::vector<Tensor<double>> inputs,
                double h = kStep, double tol = kTol) {
  for (auto& t : inputs) t.set_requires_grad(true);

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    Tensor<double> loss = fn(inputs);
    tape.backward(loss);
    for (auto& t : inputs)
      analytic.push_back(t.has_grad() ? t.grad()
                                      : std::vector<double>(t.values().size(),
                                                            0.0));
  }

  auto eval = [&](const std::vector<Tensor<double>>& args) {
    return fn(args).item();
  };

  for (size_t k = 0; k < inputs.size(); ++k) {
    for (size_t i = 0; i < inputs[k].values().size(); ++i) {
      std::vector<Tensor<double>> plus, minus;
      for (size_t j = 0; j < inputs.size(); ++j) {
        plus.push_back(inputs[j].clone());
        minus.push_back(inputs[j].clone());
        plus.back().set_requires_grad(false);
        minus.back().set_requires_grad(false);
      }
      plus[k].values()[i] += h;
      minus[k].values()[i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
      const double ad = analytic[k][i];
      const double err =
          std::fabs(ad - fd) / std::max({1.0, std::fabs(ad), std::fabs(fd)});
      ++report.checks;
      if (err > report.max_err) report.max_err = err;
      if (err > tol) report.pass = false;
    }
  }
  ++report.instances;
}

namespace detail {

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Values bounded away from zero, for ops with a kink at the origin.
inline Tensor<double> random_away_from_zero(Rng& rng, Shape shape,
                                            double min_mag = 0.05) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) {
    const double mag = rng.uniform(min_mag, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

/// All pairwise gaps at least `gap`, so finite differences never cross an
/// argmax tie.
inline Tensor<double> random_distinct(Rng& rng, Shape shape,
                                      double gap = 1e-3) {
  const int64_t n = shape_numel(shape);
  std::vector<double> vals(static_cast<size_t>(n));
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  // Fisher-Yates with the provided stream.
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = rng.uniform_int(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  for (int64_t i = 0; i < n; ++i)
    vals[static_cast<size_t>(order[static_cast<size_t>(i)])] =
        static_cast<double>(i) * 4.0 * gap + rng.uniform(0.0, gap);
  return Tensor<double>::from(std::move(shape), std::move(vals));
}

inline std::vector<int> random_labels(Rng& rng, int count, int classes) {
  std::vector<int> labels(static_cast<size_t>(count));
  for (int& y : labels) y = static_cast<int>(rng.uniform_int(0, classes - 1));
  return labels;
}

}  // namespace detail

/// Runs the full finite-difference suite over every differentiable op.
inline std::vector<Report> run_suite(uint64_t seed = 11,
                                     int instances_per_op = 20) {
  std::vector<Report> reports;
  Rng rng(seed);

  auto suite = [&](const std::string& name, auto make_inputs, auto fn) {
    Report r;
    r.name = name;
    for (int i = 0; i < instances_per_op; ++i)
      check_into(r, fn, make_inputs());
    reports.push_back(std::move(r));
  };

  const Shape vec{6};
  const Shape mat{3, 4};

  suite(
      "add",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, mat),
                                           detail::random_tensor(rng, mat)};
      },
      [](const auto& in) { return sum(add(in[0], in[1])); });
  suite(
      "sub",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, mat),
                                           detail::random_tensor(rng, mat)};
      },
      [](const auto& in) { return sum(sub(in[0], in[1])); });
  suite(
      "mul",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, mat),
                                           detail::random_tensor(rng, mat)};
      },
      [](const auto& in) { return sum(mul(in[0], in[1])); });
  suite(
      "mul_scalar",
      [&] {
        return std::vector<Tensor<double>>{
            detail::random_tensor(rng, mat),
            detail::random_tensor(rng, Shape{})};
      },
      [](const auto& in) { return sum(mul(in[0], in[1])); });
  suite(
      "div",
      [&] {
        return std::vector<Tensor<double>>{
            detail::random_tensor(rng, mat),
            detail::random_away_from_zero(rng, mat, 0.3)};
      },
      [](const auto& in) { return sum(div(in[0], in[1])); });
  suite(
      "neg",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, vec)};
      },
      [](const auto& in) { return sum(neg(in[0])); });
  suite(
      "relu",
      [&] {
        return std::vector<Tensor<double>>{
            detail::random_away_from_zero(rng, mat)};
      },
      [](const auto& in) { return sum(relu(in[0])); });
  suite(
      "abs",
      [&] {
        return std::vector<Tensor<double>>{
            detail::random_away_from_zero(rng, mat)};
      },
      [](const auto& in) { return sum(abs(in[0])); });
  suite(
      "exp",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, mat)};
      },
      [](const auto& in) { return sum(exp(in[0])); });
  suite(
      "log",
      [&] {
        return std::vector<Tensor<double>>{
            detail::random_tensor(rng, mat, 0.2, 2.0)};
      },
      [](const auto& in) { return sum(log(in[0])); });
  suite(
      "tanh",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, mat)};
      },
      [](const auto& in) { return sum(tanh(in[0])); });
  suite(
      "sum_axis",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, mat),
                                           detail::random_tensor(rng, Shape{4})};
      },
      [](const auto& in) {
        return sum(mul(reduce_sum(in[0], {0}), in[1]));
      });
  suite(
      "mean",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, mat)};
      },
      [](const auto& in) { return mean(in[0]); });
  suite(
      "max_reduce",
      [&] {
        return std::vector<Tensor<double>>{detail::random_distinct(rng, mat)};
      },
      [](const auto& in) { return sum(reduce_max(in[0], {1})); });
  suite(
      "reshape",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, mat),
                                           detail::random_tensor(rng, Shape{12})};
      },
      [](const auto& in) { return sum(mul(reshape(in[0], {12}), in[1])); });
  suite(
      "transpose2d",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, mat),
                                           detail::random_tensor(rng, Shape{4, 3})};
      },
      [](const auto& in) { return sum(mul(transpose2d(in[0]), in[1])); });
  suite(
      "matmul",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, {3, 5}),
                                           detail::random_tensor(rng, {5, 2})};
      },
      [](const auto& in) {
        Tensor<double> p = matmul(in[0], in[1]);
        return sum(mul(p, p));
      });
  suite(
      "l2_normalize_rows",
      [&] {
        return std::vector<Tensor<double>>{
            detail::random_away_from_zero(rng, {3, 5}, 0.3),
            detail::random_tensor(rng, {3, 5})};
      },
      [](const auto& in) { return sum(mul(l2_normalize_rows(in[0]), in[1])); });
  {
    auto labels = detail::random_labels(rng, 4, 5);
    suite(
        "softmax_cross_entropy",
        [&] {
          return std::vector<Tensor<double>>{
              detail::random_tensor(rng, {4, 5}, -2.0, 2.0)};
        },
        [labels](const auto& in) {
          return softmax_cross_entropy(in[0], labels);
        });
  }
  {
    auto labels = detail::random_labels(rng, 4, 5);
    suite(
        "cos_margin_adjust",
        [&] {
          return std::vector<Tensor<double>>{
              detail::random_tensor(rng, {4, 5}, -0.9, 0.9)};
        },
        [labels](const auto& in) {
          return sum(cos_margin_adjust(in[0], labels, 0.5));
        });
  }
  suite(
      "conv2d",
      [&] {
        return std::vector<Tensor<double>>{
            detail::random_tensor(rng, {1, 2, 5, 5}),
            detail::random_tensor(rng, {3, 2, 3, 3}),
            detail::random_tensor(rng, {3})};
      },
      [](const auto& in) {
        Tensor<double> y = conv2d(in[0], in[1], in[2], 2, 1);
        return sum(mul(y, y));
      });
  suite(
      "tconv2d",
      [&] {
        return std::vector<Tensor<double>>{
            detail::random_tensor(rng, {1, 3, 3, 3}),
            detail::random_tensor(rng, {3, 2, 4, 4}),
            detail::random_tensor(rng, {2})};
      },
      [](const auto& in) {
        Tensor<double> y = tconv2d(in[0], in[1], in[2], 2, 1);
        return sum(mul(y, y));
      });
  suite(
      "global_max_pool",
      [&] {
        return std::vector<Tensor<double>>{
            detail::random_distinct(rng, {2, 3, 3, 3})};
      },
      [](const auto& in) { return sum(global_max_pool(in[0])); });
  suite(
      "mse_loss",
      [&] {
        return std::vector<Tensor<double>>{detail::random_tensor(rng, mat),
                                           detail::random_tensor(rng, mat)};
      },
      [](const auto& in) { return mse_loss(in[0], in[1]); });
  {
    auto labels = detail::random_labels(rng, 3, 4);
    suite(
        "arcface_loss",
        [&] {
          return std::vector<Tensor<double>>{
              detail::random_away_from_zero(rng, {3, 6}, 0.2),
              detail::random_away_from_zero(rng, {4, 6}, 0.2)};
        },
        [labels](const auto& in) {
          LossConfig<double> cfg;
          cfg.margin = 0.5;
          cfg.scale = 8.0;
          return arcface_loss(in[0], in[1], labels, cfg);
        });
  }
  // The saliency gradient-baseline path: conv features -> pooled vector ->
  // normalised dot against a fixed reference.
  suite(
      "cosine_vs_input",
      [&] {
        return std::vector<Tensor<double>>{
            detail::random_tensor(rng, {1, 1, 8, 8}),
            detail::random_tensor(rng, {4, 1, 3, 3}),
            detail::random_away_from_zero(rng, {1, 4}, 0.3)};
      },
      [](const auto& in) {
        Tensor<double> bias({4});
        Tensor<double> c = relu(conv2d(in[0], in[1], bias, 2, 1));
        Tensor<double> f = global_max_pool(c);
        Tensor<double> sim = matmul(l2_normalize_rows(f),
                                    transpose2d(l2_normalize_rows(in[2])));
        return sum(sim);
      });

  return reports;
}

inline bool all_pass(const std::vector<Report>& reports) {
  for (const auto& r : reports)
    if (!r.pass) return false;
  return true;
}

}  // namespace xfr::gradcheck
