#pragma once

// Dense 2-D tensors with a reverse-mode tape.
//
// Every op returns a fresh Tensor. When grad mode is on and at least one input
// requires a gradient, the result carries a TapeNode that records its inputs
// and a closure holding the backward rule. backward() walks those nodes in
// reverse topological order.
//
// Gradient semantics:
//   * leaf tensors accumulate into grad across backward() calls until
//     zero_grad() is called;
//   * non-leaf tensors on the tape have their grad reset at the start of each
//     backward() and hold the gradient of the most recent call only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rgvq/errors.hpp"

namespace rgvq {

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  AddRowVector,
  MulRowVector,
  Relu,
  Elu,
  Sigmoid,
  Exp,
  Log,
  SoftmaxRows,
  LogSoftmaxRows,
  PairwiseSqDist,
  StraightThrough,
  Sum,
  Mean,
  Transpose,
  GatherRows,
  RowDot,
  RowNormalize,
  SegmentLogSumExp,
  SparseAggregate,
};

enum class Activation { Identity, Relu, Elu, Sigmoid, Exp, Log };

struct TensorImpl;
using TensorPtr = std::shared_ptr<TensorImpl>;

struct TapeNode {
  OpKind op = OpKind::Leaf;
  std::vector<TensorPtr> inputs;
  // Reads out.grad and accumulates into the grad buffers of inputs that
  // require gradients. Saved context is captured by value.
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is written
  bool requires_grad = false;
  std::unique_ptr<TapeNode> node;  // null for leaves and constants

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables tape recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : impl_(std::make_shared<TensorImpl>()) {
    impl_->rows = rows;
    impl_->cols = cols;
    impl_->data.assign(rows * cols, fill);
  }

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values) : impl_(std::make_shared<TensorImpl>()) {
    if (values.size() != rows * cols) {
      std::ostringstream os;
      os << "tensor data length " << values.size() << " does not match shape " << rows << "x" << cols;
      throw DimensionError(os.str());
    }
    impl_->rows = rows;
    impl_->cols = cols;
    impl_->data = std::move(values);
  }

  explicit Tensor(TensorPtr impl) : impl_(std::move(impl)) {}

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged initializer for tensor");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(values));
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(rows, cols, 0.0); }
  static Tensor ones(std::size_t rows, std::size_t cols) { return Tensor(rows, cols, 1.0); }
  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor identity(std::size_t n) {
    Tensor t(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = 1.0;
    return t;
  }

  std::size_t rows() const { return impl_->rows; }
  std::size_t cols() const { return impl_->cols; }
  std::size_t size() const { return impl_->data.size(); }
  std::string shape_string() const { return std::to_string(rows()) + "x" + std::to_string(cols()); }

  std::span<const double> values() const { return impl_->data; }
  // In-place access for optimizers and finite-difference probes. Mutating a
  // tensor that is an input of a live tape invalidates that tape.
  std::span<double> mutable_values() { return impl_->data; }
  std::span<const double> row(std::size_t i) const { return {impl_->data.data() + i * cols(), cols()}; }

  double operator()(std::size_t i, std::size_t j) const { return impl_->data[i * cols() + j]; }
  double& at(std::size_t i, std::size_t j) { return impl_->data[i * cols() + j]; }

  double item() const {
    if (size() != 1) throw ContractError("item() called on a " + shape_string() + " tensor");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag = true) {
    if (impl_->node) throw ContractError("requires_grad can only be set on leaf tensors");
    impl_->requires_grad = flag;
    return *this;
  }
  bool is_leaf() const { return impl_->node == nullptr; }
  OpKind op() const { return impl_->node ? impl_->node->op : OpKind::Leaf; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  // Gradient values, or zeros if none was written.
  Tensor grad() const {
    if (!has_grad()) return Tensor(rows(), cols(), 0.0);
    return Tensor(rows(), cols(), impl_->grad);
  }
  std::span<const double> grad_values() const { return impl_->grad; }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  // Copy of the values with no tape and no gradient requirement.
  Tensor detach() const { return Tensor(rows(), cols(), impl_->data); }

  const TensorPtr& impl() const { return impl_; }

 private:
  TensorPtr impl_;
};

namespace detail {

inline Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> values, OpKind op,
                          std::vector<TensorPtr> inputs, std::function<void(const TensorImpl&)> backward) {
  Tensor out(rows, cols, std::move(values));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (!needs) return out;
  auto& impl = *out.impl();
  impl.requires_grad = true;
  impl.node = std::make_unique<TapeNode>();
  impl.node->op = op;
  impl.node->inputs = std::move(inputs);
  impl.node->backward = std::move(backward);
  return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

inline TensorImpl& input(const TensorImpl& out, std::size_t i) { return *out.node->inputs[i]; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ, " + a.shape_string() + " * " + b.shape_string());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  const auto A = a.values();
  const auto B = b.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * B[p * m + j];
    }
  return detail::make_result(n, m, std::move(out), OpKind::MatMul, {a.impl(), b.impl()}, [n, k, m](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    auto& tb = detail::input(o, 1);
    const auto& G = o.grad;
    if (ta.requires_grad) {
      ta.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += G[i * m + j] * tb.data[p * m + j];
          ta.grad[i * k + p] += s;
        }
    }
    if (tb.requires_grad) {
      tb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = ta.data[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) tb.grad[p * m + j] += aip * G[i * m + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a(i, j);
  return detail::make_result(c, r, std::move(out), OpKind::Transpose, {a.impl()}, [r, c](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    ta.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ta.grad[i * c + j] += o.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

enum class Elementwise { Add, Sub, Mul };

inline Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind) {
  detail::require_same_shape(a, b, "elementwise");
  const auto A = a.values();
  const auto B = b.values();
  std::vector<double> out(A.size());
  OpKind op = OpKind::Add;
  switch (kind) {
    case Elementwise::Add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
      op = OpKind::Add;
      break;
    case Elementwise::Sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
      op = OpKind::Sub;
      break;
    case Elementwise::Mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
      op = OpKind::Mul;
      break;
  }
  return detail::make_result(a.rows(), a.cols(), std::move(out), op, {a.impl(), b.impl()}, [kind](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    auto& tb = detail::input(o, 1);
    const std::size_t len = o.grad.size();
    if (ta.requires_grad) {
      ta.ensure_grad();
      for (std::size_t i = 0; i < len; ++i)
        ta.grad[i] += kind == Elementwise::Mul ? o.grad[i] * tb.data[i] : o.grad[i];
    }
    if (tb.requires_grad) {
      tb.ensure_grad();
      for (std::size_t i = 0; i < len; ++i) {
        switch (kind) {
          case Elementwise::Add: tb.grad[i] += o.grad[i]; break;
          case Elementwise::Sub: tb.grad[i] -= o.grad[i]; break;
          case Elementwise::Mul: tb.grad[i] += o.grad[i] * ta.data[i]; break;
        }
      }
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::Add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::Sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::Mul); }

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  return detail::make_result(a.rows(), a.cols(), std::move(out), OpKind::Scale, {a.impl()}, [s](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    ta.ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) ta.grad[i] += s * o.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v += s;
  return detail::make_result(a.rows(), a.cols(), std::move(out), OpKind::AddScalar, {a.impl()}, [](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    ta.ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) ta.grad[i] += o.grad[i];
  });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// a + row, where row is 1 x a.cols() and is added to every row (bias).
inline Tensor add_row_vector(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_row_vector: expected 1x" + std::to_string(a.cols()) + " row, got " + row.shape_string());
  const std::size_t n = a.rows(), c = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += row(0, j);
  return detail::make_result(n, c, std::move(out), OpKind::AddRowVector, {a.impl(), row.impl()}, [n, c](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    auto& tr = detail::input(o, 1);
    if (ta.requires_grad) {
      ta.ensure_grad();
      for (std::size_t i = 0; i < n * c; ++i) ta.grad[i] += o.grad[i];
    }
    if (tr.requires_grad) {
      tr.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) tr.grad[j] += o.grad[i * c + j];
    }
  });
}

// a * row elementwise per row (diagonal scaling).
inline Tensor mul_row_vector(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("mul_row_vector: expected 1x" + std::to_string(a.cols()) + " row, got " + row.shape_string());
  const std::size_t n = a.rows(), c = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= row(0, j);
  return detail::make_result(n, c, std::move(out), OpKind::MulRowVector, {a.impl(), row.impl()}, [n, c](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    auto& tr = detail::input(o, 1);
    if (ta.requires_grad) {
      ta.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) ta.grad[i * c + j] += o.grad[i * c + j] * tr.data[j];
    }
    if (tr.requires_grad) {
      tr.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) tr.grad[j] += o.grad[i * c + j] * ta.data[i * c + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Tensor activation(const Tensor& a, Activation kind) {
  const auto A = a.values();
  std::vector<double> out(A.size());
  OpKind op = OpKind::Relu;
  switch (kind) {
    case Activation::Identity:
      return a;
    case Activation::Relu:
      for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] > 0.0 ? A[i] : 0.0;
      op = OpKind::Relu;
      break;
    case Activation::Elu:
      for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] > 0.0 ? A[i] : std::expm1(A[i]);
      op = OpKind::Elu;
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < A.size(); ++i)
        out[i] = A[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-A[i])) : std::exp(A[i]) / (1.0 + std::exp(A[i]));
      op = OpKind::Sigmoid;
      break;
    case Activation::Exp:
      for (std::size_t i = 0; i < A.size(); ++i) out[i] = std::exp(A[i]);
      op = OpKind::Exp;
      break;
    case Activation::Log:
      for (std::size_t i = 0; i < A.size(); ++i) {
        if (!(A[i] > 0.0)) {
          std::ostringstream os;
          os << "log: non-positive input " << A[i] << " at flat index " << i;
          throw DomainError(os.str());
        }
        out[i] = std::log(A[i]);
      }
      op = OpKind::Log;
      break;
  }
  return detail::make_result(a.rows(), a.cols(), std::move(out), op, {a.impl()}, [kind](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    ta.ensure_grad();
    const auto& y = o.data;
    const auto& x = ta.data;
    for (std::size_t i = 0; i < y.size(); ++i) {
      double d = 0.0;
      switch (kind) {
        case Activation::Identity: d = 1.0; break;
        case Activation::Relu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
        case Activation::Elu: d = x[i] > 0.0 ? 1.0 : y[i] + 1.0; break;
        case Activation::Sigmoid: d = y[i] * (1.0 - y[i]); break;
        case Activation::Exp: d = y[i]; break;
        case Activation::Log: d = 1.0 / x[i]; break;
      }
      ta.grad[i] += d * o.grad[i];
    }
  });
}

inline Tensor relu(const Tensor& a) { return activation(a, Activation::Relu); }
inline Tensor elu(const Tensor& a) { return activation(a, Activation::Elu); }
inline Tensor sigmoid(const Tensor& a) { return activation(a, Activation::Sigmoid); }
inline Tensor exp(const Tensor& a) { return activation(a, Activation::Exp); }
inline Tensor log(const Tensor& a) { return activation(a, Activation::Log); }

// Row-wise softmax of a / temperature, with max subtraction.
inline Tensor softmax_rows(const Tensor& a, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw ParameterError("softmax_rows: temperature must be > 0");
  const std::size_t n = a.rows(), c = a.cols();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = a.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : r) mx = std::max(mx, v / temperature);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(r[j] / temperature - mx);
      s += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
  }
  return detail::make_result(n, c, std::move(out), OpKind::SoftmaxRows, {a.impl()}, [n, c, temperature](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    ta.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += o.grad[i * c + j] * o.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        ta.grad[i * c + j] += o.data[i * c + j] * (o.grad[i * c + j] - dot) / temperature;
    }
  });
}

inline Tensor log_softmax_rows(const Tensor& a) {
  const std::size_t n = a.rows(), c = a.cols();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = a.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = r[j] - lse;
  }
  return detail::make_result(n, c, std::move(out), OpKind::LogSoftmaxRows, {a.impl()}, [n, c](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    ta.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += o.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        ta.grad[i * c + j] += o.grad[i * c + j] - std::exp(o.data[i * c + j]) * gsum;
    }
  });
}

// ---------------------------------------------------------------------------
// Distances and row-wise helpers

// result(i, j) = sum_k (a(i, k) - b(j, k))^2
inline Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw DimensionError("pairwise_sq_dist: feature dimensions differ, " + a.shape_string() + " vs " + b.shape_string());
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = ai[k] - bj[k];
        s += diff * diff;
      }
      out[i * m + j] = s;
    }
  }
  return detail::make_result(n, m, std::move(out), OpKind::PairwiseSqDist, {a.impl(), b.impl()}, [n, m, d](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    auto& tb = detail::input(o, 1);
    if (ta.requires_grad) ta.ensure_grad();
    if (tb.requires_grad) tb.ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double g = 2.0 * o.grad[i * m + j];
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = ta.data[i * d + k] - tb.data[j * d + k];
          if (ta.requires_grad) ta.grad[i * d + k] += g * diff;
          if (tb.requires_grad) tb.grad[j * d + k] -= g * diff;
        }
      }
  });
}

// Forward identity; the result is a constant, so no gradient reaches `a`.
inline Tensor stop_gradient(const Tensor& a) { return a.detach(); }

// Equivalent to sg(quantized - h) + h: forward value is exactly `quantized`,
// the gradient is copied to `h` unchanged and nothing flows into `quantized`.
inline Tensor straight_through(const Tensor& h, const Tensor& quantized) {
  detail::require_same_shape(h, quantized, "straight_through");
  std::vector<double> out(quantized.values().begin(), quantized.values().end());
  return detail::make_result(h.rows(), h.cols(), std::move(out), OpKind::StraightThrough, {h.impl()}, [](const TensorImpl& o) {
    auto& th = detail::input(o, 0);
    th.ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) th.grad[i] += o.grad[i];
  });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::make_result(1, 1, {s}, OpKind::Sum, {a.impl()}, [](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    ta.ensure_grad();
    for (double& g : ta.grad) g += o.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean of an empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  return detail::make_result(1, 1, {s * inv}, OpKind::Mean, {a.impl()}, [inv](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    ta.ensure_grad();
    for (double& g : ta.grad) g += o.grad[0] * inv;
  });
}

// Sum of squared entries.
inline Tensor sum_squares(const Tensor& a) { return sum(mul(a, a)); }

inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  const std::size_t c = a.cols();
  std::vector<double> out(index.size() * c);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= a.rows())
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) + " out of range for " + a.shape_string());
    std::copy_n(a.row(index[r]).begin(), c, out.begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return detail::make_result(index.size(), c, std::move(out), OpKind::GatherRows, {a.impl()}, [idx = std::move(idx), c](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    ta.ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) ta.grad[idx[r] * c + j] += o.grad[r * c + j];
  });
}

// result(i, 0) = <a_i, b_i>
inline Tensor row_dot(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "row_dot");
  const std::size_t n = a.rows(), c = a.cols();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += a(i, j) * b(i, j);
    out[i] = s;
  }
  return detail::make_result(n, 1, std::move(out), OpKind::RowDot, {a.impl(), b.impl()}, [n, c](const TensorImpl& o) {
    auto& ta = detail::input(o, 0);
    auto& tb = detail::input(o, 1);
    if (ta.requires_grad) {
      ta.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) ta.grad[i * c + j] += o.grad[i] * tb.data[i * c + j];
    }
    if (tb.requires_grad) {
      tb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) tb.grad[i * c + j] += o.grad[i] * ta.data[i * c + j];
    }
  });
}

// Scales each row to unit L2 norm. Rows with norm below `min_norm` are mapped
// to zero and pass no gradient.
inline Tensor row_normalize(const Tensor& a, double min_norm = 1e-12) {
  const std::size_t n = a.rows(), c = a.cols();
  std::vector<double> out(n * c, 0.0);
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : a.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (norms[i] < min_norm) continue;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a(i, j) / norms[i];
  }
  return detail::make_result(n, c, std::move(out), OpKind::RowNormalize, {a.impl()},
                             [n, c, min_norm, norms = std::move(norms)](const TensorImpl& o) {
                               auto& ta = detail::input(o, 0);
                               ta.ensure_grad();
                               for (std::size_t i = 0; i < n; ++i) {
                                 if (norms[i] < min_norm) continue;
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < c; ++j) dot += o.data[i * c + j] * o.grad[i * c + j];
                                 for (std::size_t j = 0; j < c; ++j)
                                   ta.grad[i * c + j] += (o.grad[i * c + j] - o.data[i * c + j] * dot) / norms[i];
                               }
                             });
}

// values is m x 1; offsets has S+1 entries delimiting S non-empty segments.
// result(s, 0) = log sum_{r in segment s} exp(values(r)).
inline Tensor segment_logsumexp(const Tensor& values, std::span<const std::size_t> offsets) {
  if (values.cols() != 1) throw DimensionError("segment_logsumexp: expected a column, got " + values.shape_string());
  if (offsets.empty() || offsets.back() != values.rows())
    throw DimensionError("segment_logsumexp: offsets do not cover the input");
  const std::size_t segments = offsets.size() - 1;
  std::vector<double> out(segments);
  for (std::size_t s = 0; s < segments; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ContractError("segment_logsumexp: empty segment " + std::to_string(s));
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) mx = std::max(mx, values(r, 0));
    double acc = 0.0;
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) acc += std::exp(values(r, 0) - mx);
    out[s] = mx + std::log(acc);
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return detail::make_result(segments, 1, std::move(out), OpKind::SegmentLogSumExp, {values.impl()},
                             [off = std::move(off)](const TensorImpl& o) {
                               auto& tv = detail::input(o, 0);
                               tv.ensure_grad();
                               for (std::size_t s = 0; s + 1 < off.size(); ++s)
                                 for (std::size_t r = off[s]; r < off[s + 1]; ++r)
                                   tv.grad[r] += o.grad[s] * std::exp(tv.data[r] - o.data[s]);
                             });
}

enum class Aggregator { Mean, Sum, Max };

// Neighbor aggregation over a CSR adjacency: result(v) = AGG_{u in N(v)} h(u).
// Nodes without neighbors aggregate to zero.
inline Tensor sparse_aggregate(const Tensor& h, std::span<const std::size_t> offsets, std::span<const std::size_t> neighbors,
                               Aggregator kind) {
  const std::size_t n = h.rows(), c = h.cols();
  if (offsets.size() != n + 1) throw DimensionError("sparse_aggregate: adjacency has " + std::to_string(offsets.size() - 1) +
                                                    " nodes but features have " + std::to_string(n) + " rows");
  std::vector<double> out(n * c, 0.0);
  std::vector<std::size_t> argmax;
  if (kind == Aggregator::Max) argmax.assign(n * c, SIZE_MAX);
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t begin = offsets[v], end = offsets[v + 1];
    if (begin == end) continue;
    if (kind == Aggregator::Max) {
      for (std::size_t j = 0; j < c; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t who = SIZE_MAX;
        for (std::size_t e = begin; e < end; ++e)
          if (h(neighbors[e], j) > best) {
            best = h(neighbors[e], j);
            who = neighbors[e];
          }
        out[v * c + j] = best;
        argmax[v * c + j] = who;
      }
    } else {
      for (std::size_t e = begin; e < end; ++e) {
        const auto hu = h.row(neighbors[e]);
        for (std::size_t j = 0; j < c; ++j) out[v * c + j] += hu[j];
      }
      if (kind == Aggregator::Mean) {
        const double inv = 1.0 / static_cast<double>(end - begin);
        for (std::size_t j = 0; j < c; ++j) out[v * c + j] *= inv;
      }
    }
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  std::vector<std::size_t> nbr(neighbors.begin(), neighbors.end());
  return detail::make_result(
      n, c, std::move(out), OpKind::SparseAggregate, {h.impl()},
      [n, c, kind, off = std::move(off), nbr = std::move(nbr), argmax = std::move(argmax)](const TensorImpl& o) {
        auto& th = detail::input(o, 0);
        th.ensure_grad();
        for (std::size_t v = 0; v < n; ++v) {
          const std::size_t begin = off[v], end = off[v + 1];
          if (begin == end) continue;
          if (kind == Aggregator::Max) {
            for (std::size_t j = 0; j < c; ++j) th.grad[argmax[v * c + j] * c + j] += o.grad[v * c + j];
            continue;
          }
          const double w = kind == Aggregator::Mean ? 1.0 / static_cast<double>(end - begin) : 1.0;
          for (std::size_t e = begin; e < end; ++e)
            for (std::size_t j = 0; j < c; ++j) th.grad[nbr[e] * c + j] += w * o.grad[v * c + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Reverse pass

inline void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1)
    throw ContractError("backward: loss must be 1x1, got " + loss.shape_string());
  if (!loss.requires_grad()) throw ContractError("backward: loss is not connected to any tensor that requires grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{loss.impl().get(), 0}};
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->node && next < node->node->inputs.size()) {
      TensorImpl* child = node->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (TensorImpl* t : order)
    if (t->node) t->grad.assign(t->data.size(), 0.0);
  TensorImpl& root = *loss.impl();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->node) (*it)->node->backward(**it);
}

// Max over entries of |a_i - c_i| / max(|a_i| + |c_i|, floor), where a comes
// from backward(analytic(x)), c from central differences numeric(x +- h e_i),
// and floor = 1e-3 * max_j (|a_j| + |c_j|) keeps round-off on exactly-zero
// entries from reading as a large relative error. `numeric` must agree with
// `analytic` in value; it differs when the analytic graph holds
// stop-gradients, which the numeric side replaces by constants.
// `x` must be a leaf that requires grad; its grad is overwritten.
template <typename F, typename G>
double finite_diff_check(F&& analytic, G&& numeric, Tensor x, double h = 1e-5) {
  if (!x.is_leaf() || !x.requires_grad()) throw ContractError("finite_diff_check: x must be a leaf requiring grad");
  x.zero_grad();
  backward(analytic(x));
  const std::vector<double> grad(x.grad_values().begin(), x.grad_values().end());
  NoGradGuard guard;
  auto values = x.mutable_values();
  std::vector<double> central(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = numeric(x).item();
    values[i] = saved - h;
    const double down = numeric(x).item();
    values[i] = saved;
    central[i] = (up - down) / (2.0 * h);
  }
  double peak = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) peak = std::max(peak, std::abs(grad[i]) + std::abs(central[i]));
  const double floor = std::max(1e-3 * peak, 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double denom = std::max(std::abs(grad[i]) + std::abs(central[i]), floor);
    worst = std::max(worst, std::abs(grad[i] - central[i]) / denom);
  }
  return worst;
}

template <typename F>
double finite_diff_check(F&& f, Tensor x, double h = 1e-5) {
  return finite_diff_check(f, f, std::move(x), h);
}

}  // namespace rgvq
