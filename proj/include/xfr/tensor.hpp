#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xfr/common.hpp"

namespace xfr {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense n-dimensional array with shared storage and an optional gradient
/// buffer. Copies are shallow; clone() deep-copies. Values are treated as
/// immutable once produced by an op; leaves (parameters, inputs) may be
/// mutated in place through values() when no tape is recording them.
template <typename T>
class Tensor {
  struct Payload {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
  };

 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : p_(std::make_shared<Payload>()) {
    validate_shape(shape);
    p_->shape = std::move(shape);
    p_->values.assign(static_cast<size_t>(shape_numel(p_->shape)), fill);
    p_->requires_grad = requires_grad;
  }

  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("tensor: value count " +
                                  std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape));
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = std::move(shape);
    t.p_->values = std::move(values);
    t.p_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({}, {v}, requires_grad);
  }

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  int64_t size() const { return static_cast<int64_t>(p_->values.size()); }
  int dim(int axis) const { return p_->shape.at(static_cast<size_t>(axis)); }
  int rank() const { return static_cast<int>(p_->shape.size()); }

  std::vector<T>& values() { return p_->values; }
  const std::vector<T>& values() const { return p_->values; }
  T* data() { return p_->values.data(); }
  const T* data() const { return p_->values.data(); }

  bool requires_grad() const { return p_ && p_->requires_grad; }
  void set_requires_grad(bool b) { p_->requires_grad = b; }

  bool has_grad() const { return p_ && !p_->grad.empty(); }

  /// Gradient buffer, zero-initialised on first access. Like the value
  /// storage this lives in the shared payload, so it is reachable through
  /// any handle to the tensor, const or not.
  std::vector<T>& grad() const {
    if (p_->grad.empty()) p_->grad.assign(p_->values.size(), T(0));
    return p_->grad;
  }

  void zero_grad() { p_->grad.clear(); }

  /// Value of a one-element tensor.
  T item() const {
    if (size() != 1)
      throw std::invalid_argument("item() on tensor of size " +
                                  std::to_string(size()));
    return p_->values[0];
  }

  T& at(std::initializer_list<int> idx) {
    return p_->values[static_cast<size_t>(flat_index(idx))];
  }
  T at(std::initializer_list<int> idx) const {
    return p_->values[static_cast<size_t>(flat_index(idx))];
  }

  int64_t flat_index(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw std::invalid_argument("index rank mismatch");
    int64_t flat = 0;
    auto it = idx.begin();
    for (int a = 0; a < rank(); ++a, ++it) {
      if (*it < 0 || *it >= p_->shape[static_cast<size_t>(a)])
        throw std::invalid_argument("index out of range");
      flat = flat * p_->shape[static_cast<size_t>(a)] + *it;
    }
    return flat;
  }

  /// Deep copy of the values; the clone does not share storage or grad.
  Tensor clone() const {
    return from(p_->shape, p_->values, p_->requires_grad);
  }

  /// Same storage identity check (shallow copies compare equal).
  bool same_storage(const Tensor& other) const { return p_ == other.p_; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(p_->values.size());
    for (size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<U>(p_->values[i]);
    return Tensor<U>::from(p_->shape, std::move(out), p_->requires_grad);
  }

 private:
  static void validate_shape(const Shape& shape) {
    for (int d : shape)
      if (d <= 0)
        throw std::invalid_argument("tensor: non-positive dim in shape " +
                                    shape_str(shape));
  }

  std::shared_ptr<Payload> p_;
};

/// Records backward closures for one reverse-mode pass. Creating a Tape
/// makes it the thread's active tape (RAII, nestable); ops record onto the
/// active tape only when some input requires a gradient. A tape replays
/// its closures exactly once, in reverse creation order.
template <typename T>
class Tape {
 public:
  Tape() : prev_(current_ref()) { current_ref() = this; }
  ~Tape() { current_ref() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_ref(); }

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  size_t node_count() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and replays the tape in reverse. Gradients
  /// accumulate additively into every requires_grad tensor reached.
  void backward(Tensor<T> root) {
    if (consumed_) throw std::runtime_error("backward: tape already consumed");
    if (!root.defined() || root.size() != 1)
      throw std::invalid_argument("backward: root must be a scalar");
    if (!root.requires_grad())
      throw std::invalid_argument(
          "backward: root was not recorded on an active tape");
    consumed_ = true;
    root.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
  }

 private:
  static Tape*& current_ref() {
    static thread_local Tape* current = nullptr;
    return current;
  }

  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
  bool consumed_ = false;
};

namespace detail {

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.values())
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite value produced by ") +
                               op);
}

template <typename T>
bool tape_should_record(bool any_input_grad) {
  return any_input_grad && Tape<T>::current() != nullptr;
}

inline void check_axes(const Shape& shape, const std::vector<int>& axes) {
  for (int a : axes)
    if (a < 0 || a >= static_cast<int>(shape.size()))
      throw std::invalid_argument("reduce: axis " + std::to_string(a) +
                                  " invalid for shape " + shape_str(shape));
  for (size_t i = 1; i < axes.size(); ++i)
    if (axes[i] <= axes[i - 1])
      throw std::invalid_argument("reduce: axes must be strictly ascending");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

/// Shared implementation for binary elementwise ops. The second operand is
/// either shape-equal or a one-element tensor applied to every lane; no
/// other broadcasting exists. dfa/dfb map (a, b, out) to the local partial.
template <typename T, typename Fwd, typename Dfa, typename Dfb>
Tensor<T> binary_elementwise(const char* name, const Tensor<T>& a,
                             const Tensor<T>& b, Fwd fwd, Dfa dfa, Dfb dfb) {
  const bool b_scalar = b.size() == 1;
  if (!b_scalar && a.shape() != b.shape())
    throw std::invalid_argument(std::string(name) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i)
    po[i] = fwd(pa[i], pb[b_scalar ? 0 : i]);
  detail::ensure_finite(out, name);

  const bool rec =
      detail::tape_should_record<T>(a.requires_grad() || b.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=]() mutable {
      const std::vector<T>& g = out.grad();
      if (a.requires_grad()) {
        std::vector<T>& ga = a.grad();
        for (int64_t i = 0; i < n; ++i)
          ga[i] += g[i] * dfa(pa[i], pb[b_scalar ? 0 : i], po[i]);
      }
      if (b.requires_grad()) {
        std::vector<T>& gb = b.grad();
        for (int64_t i = 0; i < n; ++i)
          gb[b_scalar ? 0 : i] += g[i] * dfb(pa[i], pb[b_scalar ? 0 : i], po[i]);
      }
    });
  }
  return out;
}

template <typename T, typename Fwd, typename Df>
Tensor<T> unary_elementwise(const char* name, const Tensor<T>& a, Fwd fwd,
                            Df df) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  detail::ensure_finite(out, name);

  const bool rec = detail::tape_should_record<T>(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=]() mutable {
      const std::vector<T>& g = out.grad();
      std::vector<T>& ga = a.grad();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * df(pa[i], po[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.values())
    if (v == T(0)) throw std::invalid_argument("div: division by zero");
  return binary_elementwise<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y, T) { return T(1) / y; },
      [](T x, T y, T) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T s) {
  return add(a, Tensor<T>::scalar(s));
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, T s) {
  return sub(a, Tensor<T>::scalar(s));
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, T s) {
  return mul(a, Tensor<T>::scalar(s));
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, T s) {
  return div(a, Tensor<T>::scalar(s));
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "abs", a, [](T x) { return x < T(0) ? -x : x; },
      [](T x, T) { return x < T(0) ? T(-1) : (x > T(0) ? T(1) : T(0)); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "exp", a, [](T x) { return std::exp(x); },
      [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "log", a, [](T x) { return std::log(x); },
      [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

/// Maps every input flat index to its output flat index once the axes in
/// `reduce_axis` are dropped. Iterating inputs in ascending row-major order
/// therefore accumulates each output in ascending row-major order too.
struct ReduceIndexer {
  Shape in_shape;
  std::vector<bool> reduced;
  Shape out_shape;

  ReduceIndexer(const Shape& shape, const std::vector<int>& axes)
      : in_shape(shape), reduced(shape.size(), false) {
    for (int a : axes) reduced[static_cast<size_t>(a)] = true;
    for (size_t i = 0; i < shape.size(); ++i)
      if (!reduced[i]) out_shape.push_back(shape[i]);
  }

  template <typename Visit>
  void for_each(Visit&& visit) const {
    const int r = static_cast<int>(in_shape.size());
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int64_t flat = 0;
    const int64_t total = shape_numel(in_shape);
    for (int64_t i = 0; i < total; ++i, ++flat) {
      int64_t out = 0;
      for (int a = 0; a < r; ++a)
        if (!reduced[static_cast<size_t>(a)])
          out = out * in_shape[static_cast<size_t>(a)] +
                idx[static_cast<size_t>(a)];
      visit(flat, out);
      for (int a = r - 1; a >= 0; --a) {
        if (++idx[static_cast<size_t>(a)] < in_shape[static_cast<size_t>(a)])
          break;
        idx[static_cast<size_t>(a)] = 0;
      }
    }
  }
};

inline std::vector<int> all_axes(const Shape& shape) {
  std::vector<int> axes(shape.size());
  std::iota(axes.begin(), axes.end(), 0);
  return axes;
}

}  // namespace detail

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, const std::vector<int>& axes) {
  detail::check_axes(a.shape(), axes);
  detail::ReduceIndexer ix(a.shape(), axes);
  Tensor<T> out(ix.out_shape);
  const T* pa = a.data();
  T* po = out.data();
  ix.for_each([&](int64_t in, int64_t o) { po[o] += pa[in]; });
  detail::ensure_finite(out, "sum");

  const bool rec = detail::tape_should_record<T>(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=]() mutable {
      const std::vector<T>& g = out.grad();
      std::vector<T>& ga = a.grad();
      ix.for_each([&](int64_t in, int64_t o) { ga[in] += g[o]; });
    });
  }
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, const std::vector<int>& axes) {
  detail::check_axes(a.shape(), axes);
  int64_t count = 1;
  for (int ax : axes) count *= a.dim(ax);
  return div(reduce_sum(a, axes), static_cast<T>(count));
}

/// Max over the given axes. Ties resolve to the lowest row-major index.
/// If argmax_out is given it receives, per output element, the flat input
/// index of the winning entry.
template <typename T>
Tensor<T> reduce_max(const Tensor<T>& a, const std::vector<int>& axes,
                     std::vector<int64_t>* argmax_out = nullptr) {
  detail::check_axes(a.shape(), axes);
  detail::ReduceIndexer ix(a.shape(), axes);
  const int64_t out_n = shape_numel(ix.out_shape);
  std::vector<int64_t> argmax(static_cast<size_t>(out_n), -1);
  Tensor<T> out(ix.out_shape);
  const T* pa = a.data();
  T* po = out.data();
  ix.for_each([&](int64_t in, int64_t o) {
    if (argmax[static_cast<size_t>(o)] < 0 || pa[in] > po[o]) {
      po[o] = pa[in];
      argmax[static_cast<size_t>(o)] = in;
    }
  });
  detail::ensure_finite(out, "max");

  const bool rec = detail::tape_should_record<T>(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=, am = argmax]() mutable {
      const std::vector<T>& g = out.grad();
      std::vector<T>& ga = a.grad();
      for (int64_t o = 0; o < out_n; ++o)
        ga[am[static_cast<size_t>(o)]] += g[o];
    });
  }
  if (argmax_out) *argmax_out = std::move(argmax);
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  return reduce_sum(a, detail::all_axes(a.shape()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return reduce_mean(a, detail::all_axes(a.shape()));
}

template <typename T>
Tensor<T> max_all(const Tensor<T>& a, int64_t* argmax = nullptr) {
  std::vector<int64_t> am;
  Tensor<T> out = reduce_max(a, detail::all_axes(a.shape()), &am);
  if (argmax) *argmax = am[0];
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.size())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor<T> out = Tensor<T>::from(std::move(new_shape), a.values());
  const bool rec = detail::tape_should_record<T>(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    const int64_t n = a.size();
    Tape<T>::current()->record([=]() mutable {
      const std::vector<T>& g = out.grad();
      std::vector<T>& ga = a.grad();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose2d: rank != 2");
  const int m = a.dim(0), n = a.dim(1);
  Tensor<T> out({n, m});
  const T* pa = a.data();
  T* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];

  const bool rec = detail::tape_should_record<T>(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=]() mutable {
      const std::vector<T>& g = out.grad();
      std::vector<T>& ga = a.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = T(0);
      for (int p = 0; p < k; ++p)
        acc = std::fma(pa[i * k + p], pb[p * n + j], acc);
      po[i * n + j] = acc;
    }
  detail::ensure_finite(out, "matmul");

  const bool rec =
      detail::tape_should_record<T>(a.requires_grad() || b.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=]() mutable {
      const std::vector<T>& g = out.grad();
      if (a.requires_grad()) {
        std::vector<T>& ga = a.grad();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            T acc = T(0);
            for (int j = 0; j < n; ++j)
              acc = std::fma(g[i * n + j], pb[p * n + j], acc);
            ga[i * k + p] += acc;
          }
      }
      if (b.requires_grad()) {
        std::vector<T>& gb = b.grad();
        for (int p = 0; p < k; ++p)
          for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int i = 0; i < m; ++i)
              acc = std::fma(pa[i * k + p], g[i * n + j], acc);
            gb[p * n + j] += acc;
          }
      }
    });
  }
  return out;
}

/// Row-wise L2 normalisation of a (rows, cols) matrix. Zero rows are a
/// contract violation because the direction is undefined.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& a) {
  if (a.rank() != 2) throw std::invalid_argument("l2_normalize_rows: rank != 2");
  const int m = a.dim(0), n = a.dim(1);
  Tensor<T> out(a.shape());
  std::vector<T> norms(static_cast<size_t>(m));
  const T* pa = a.data();
  T* po = out.data();
  for (int i = 0; i < m; ++i) {
    T acc = T(0);
    for (int j = 0; j < n; ++j)
      acc = std::fma(pa[i * n + j], pa[i * n + j], acc);
    if (acc == T(0))
      throw std::invalid_argument("l2_normalize_rows: zero row " +
                                  std::to_string(i));
    const T r = std::sqrt(acc);
    norms[static_cast<size_t>(i)] = r;
    for (int j = 0; j < n; ++j) po[i * n + j] = pa[i * n + j] / r;
  }
  detail::ensure_finite(out, "l2_normalize_rows");

  const bool rec = detail::tape_should_record<T>(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=, norms = std::move(norms)]() mutable {
      const std::vector<T>& g = out.grad();
      std::vector<T>& ga = a.grad();
      // d/dx (x / ||x||) applied to g: (g - y (y.g)) / ||x||
      for (int i = 0; i < m; ++i) {
        T dot = T(0);
        for (int j = 0; j < n; ++j)
          dot = std::fma(po[i * n + j], g[i * n + j], dot);
        const T inv = T(1) / norms[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j)
          ga[i * n + j] += (g[i * n + j] - po[i * n + j] * dot) * inv;
      }
    });
  }
  return out;
}

/// Mean softmax cross-entropy over rows of `logits` against integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("softmax_cross_entropy: logits rank != 2");
  const int m = logits.dim(0), n = logits.dim(1);
  if (static_cast<int>(labels.size()) != m)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= n)
      throw std::invalid_argument("softmax_cross_entropy: label out of range");

  const T* pl = logits.data();
  std::vector<T> softmax(static_cast<size_t>(m) * n);
  T loss = T(0);
  for (int i = 0; i < m; ++i) {
    T mx = pl[i * n];
    for (int j = 1; j < n; ++j) mx = std::max(mx, pl[i * n + j]);
    T z = T(0);
    for (int j = 0; j < n; ++j) {
      const T e = std::exp(pl[i * n + j] - mx);
      softmax[static_cast<size_t>(i) * n + j] = e;
      z += e;
    }
    for (int j = 0; j < n; ++j) softmax[static_cast<size_t>(i) * n + j] /= z;
    loss += std::log(z) - (pl[i * n + labels[static_cast<size_t>(i)]] - mx);
  }
  loss /= static_cast<T>(m);

  Tensor<T> out = Tensor<T>::scalar(loss);
  detail::ensure_finite(out, "softmax_cross_entropy");
  const bool rec = detail::tape_should_record<T>(logits.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    Tape<T>::current()->record([=, sm = std::move(softmax)]() mutable {
      const T g = out.grad()[0];
      std::vector<T>& gl = logits.grad();
      const T inv_m = T(1) / static_cast<T>(m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          T d = sm[static_cast<size_t>(i) * n + j];
          if (j == labels[static_cast<size_t>(i)]) d -= T(1);
          gl[i * n + j] += g * d * inv_m;
        }
    });
  }
  return out;
}

}  // namespace xfr
