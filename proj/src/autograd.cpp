// SPDX-License-Identifier: Apache-2.0

#include "filmhred/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "filmhred/errors.hpp"

namespace fh {

// ---------------------------------------------------------------------------
// Parameter / ParameterStore

Parameter::Parameter(std::string name, Tensor value)
    : name_(std::move(name)), value_(std::move(value)), grad_(value_.shape(), 0.0) {}

Parameter& ParameterStore::add(std::string name, Tensor init) {
  if (index_.count(name)) throw Error("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>(name, std::move(init));
  Parameter* raw = p.get();
  params_.push_back(std::move(p));
  index_.emplace(std::move(name), raw);
  return *raw;
}

Parameter* ParameterStore::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : it->second;
}

Parameter& ParameterStore::at(std::string_view name) {
  Parameter* p = find(name);
  if (!p) throw Error("unknown parameter: " + std::string(name));
  return *p;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p->name().compare(0, prefix.size(), prefix) == 0) n += p->value().numel();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an empty Var");
  return tape_->nodes_[id_].value;
}

bool Var::requires_grad() const { return tape_ && tape_->nodes_[id_].requires_grad; }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value();
  n.param = &p;
  n.requires_grad = grad_enabled_;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + " produced non-finite values (shape " +
                       shape_str(value.shape()) + ")");
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  bool any = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw Error(std::string(op) + ": operand belongs to a different tape");
    any = any || nodes_[v.id()].requires_grad;
  }
  if (grad_enabled_ && any) {
    n.requires_grad = true;
    n.backward = std::move(fn);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) n.inputs.push_back(v.id());
  }
  return push(std::move(n));
}

Tensor* Tape::grad_slot(std::size_t id, std::size_t k) {
  Node& in = nodes_[nodes_[id].inputs[k]];
  if (!in.requires_grad) return nullptr;
  if (!in.grad.defined()) in.grad = Tensor(in.value.shape(), 0.0);
  return &in.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error("backward: loss belongs to a different tape");
  if (backward_done_) throw Error("backward: already run on this tape");
  const Node& root = nodes_[loss.id()];
  if (root.value.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root.value.shape()));
  }
  backward_done_ = true;
  if (!root.requires_grad) return;
  nodes_[loss.id()].grad = Tensor(root.value.shape(), 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.grad.defined()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      if (!n.grad.all_finite()) {
        throw NumericError("non-finite gradient for parameter " + n.param->name());
      }
      auto dst = n.param->grad().data();
      auto src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.defined()) return n.grad;
  return Tensor(n.value.shape(), 0.0);
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

Tape& tape_of(std::string_view op, const Var& a) {
  if (!a.valid()) throw Error(std::string(op) + ": empty operand");
  return *a.tape();
}

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": " + why + " (shape " + shape_str(a) + ")");
}

// Unary elementwise op with derivative expressed via input x and output y.
template <typename Fwd, typename Deriv>
Var unary(std::string_view op, const Var& a, Fwd fwd, Deriv deriv) {
  Tape& t = tape_of(op, a);
  Tensor out(a.shape());
  const auto x = a.value().data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(x[i]);
  return t.record(op, std::move(out), {a}, [deriv](Tape& tp, std::size_t id) {
    Tensor* ga = tp.grad_slot(id, 0);
    if (!ga) return;
    const auto xs = tp.value(tp.input_id(id, 0)).data();
    const auto ys = tp.value(id).data();
    const auto gy = tp.out_grad(id).data();
    auto gx = ga->data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xs[i], ys[i]);
  });
}

enum class Bcast { kSame, kRow };

Bcast broadcast_kind(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0)) return Bcast::kRow;
  shape_fail(op, a.shape(), b.shape());
}

// Shared block geometry for concat/slice on row-major storage.
struct AxisGeometry {
  std::size_t outer = 1;
  std::size_t inner = 1;
};

AxisGeometry axis_geometry(const Shape& s, std::size_t axis) {
  AxisGeometry g;
  for (std::size_t i = 0; i < axis; ++i) g.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) g.inner *= s[i];
  return g;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  constexpr std::string_view op = "matmul";
  Tape& t = tape_of(op, a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() < 1 || A.rank() > 2 || B.rank() < 1 || B.rank() > 2) shape_fail(op, A.shape(), B.shape());
  const std::size_t n = A.rank() == 2 ? A.dim(0) : 1;
  const std::size_t k = A.rank() == 2 ? A.dim(1) : A.dim(0);
  const std::size_t kb = B.dim(0);
  const std::size_t m = B.rank() == 2 ? B.dim(1) : 1;
  if (k != kb) shape_fail(op, A.shape(), B.shape());
  Shape out_shape;
  if (A.rank() == 2) out_shape.push_back(n);
  if (B.rank() == 2) out_shape.push_back(m);
  Tensor out(out_shape);
  kernels::gemm(false, false, n, k, m, A.data().data(), B.data().data(), out.data().data(), false);
  return t.record(op, std::move(out), {a, b}, [n, k, m](Tape& tp, std::size_t id) {
    const double* dc = tp.out_grad(id).data().data();
    if (Tensor* ga = tp.grad_slot(id, 0)) {
      const double* bv = tp.value(tp.input_id(id, 1)).data().data();
      kernels::gemm(false, true, n, m, k, dc, bv, ga->data().data(), true);
    }
    if (Tensor* gb = tp.grad_slot(id, 1)) {
      const double* av = tp.value(tp.input_id(id, 0)).data().data();
      kernels::gemm(true, false, k, n, m, av, dc, gb->data().data(), true);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  constexpr std::string_view op = "matmul_nt";
  Tape& t = tape_of(op, a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() < 1 || A.rank() > 2 || B.rank() != 2) shape_fail(op, A.shape(), B.shape());
  const std::size_t n = A.rank() == 2 ? A.dim(0) : 1;
  const std::size_t k = A.rank() == 2 ? A.dim(1) : A.dim(0);
  const std::size_t m = B.dim(0);
  if (B.dim(1) != k) shape_fail(op, A.shape(), B.shape());
  Shape out_shape = A.rank() == 2 ? Shape{n, m} : Shape{m};
  Tensor out(out_shape);
  kernels::gemm(false, true, n, k, m, A.data().data(), B.data().data(), out.data().data(), false);
  return t.record(op, std::move(out), {a, b}, [n, k, m](Tape& tp, std::size_t id) {
    const double* dc = tp.out_grad(id).data().data();
    if (Tensor* ga = tp.grad_slot(id, 0)) {
      const double* bv = tp.value(tp.input_id(id, 1)).data().data();
      kernels::gemm(false, false, n, m, k, dc, bv, ga->data().data(), true);
    }
    if (Tensor* gb = tp.grad_slot(id, 1)) {
      const double* av = tp.value(tp.input_id(id, 0)).data().data();
      kernels::gemm(true, false, m, n, k, dc, av, gb->data().data(), true);
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  constexpr std::string_view op = "linear";
  Tape& t = tape_of(op, x);
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  if (X.rank() < 1 || X.rank() > 2 || W.rank() != 2) shape_fail(op, X.shape(), W.shape());
  const std::size_t rows = X.rank() == 2 ? X.dim(0) : 1;
  const std::size_t in = X.rank() == 2 ? X.dim(1) : X.dim(0);
  const std::size_t out_dim = W.dim(0);
  if (W.dim(1) != in) shape_fail(op, X.shape(), W.shape());
  const bool has_bias = bias.valid();
  if (has_bias && bias.shape() != Shape{out_dim}) shape_fail(op, W.shape(), bias.shape());
  Tensor out(X.rank() == 2 ? Shape{rows, out_dim} : Shape{out_dim});
  kernels::gemm(false, true, rows, in, out_dim, X.data().data(), W.data().data(),
                out.data().data(), false);
  if (has_bias) {
    const auto bv = bias.value().data();
    auto o = out.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_dim; ++j) o[r * out_dim + j] += bv[j];
  }
  auto fn = [rows, in, out_dim](Tape& tp, std::size_t id) {
    const double* dy = tp.out_grad(id).data().data();
    if (Tensor* gx = tp.grad_slot(id, 0)) {
      const double* wv = tp.value(tp.input_id(id, 1)).data().data();
      kernels::gemm(false, false, rows, out_dim, in, dy, wv, gx->data().data(), true);
    }
    if (Tensor* gw = tp.grad_slot(id, 1)) {
      const double* xv = tp.value(tp.input_id(id, 0)).data().data();
      kernels::gemm(true, false, out_dim, rows, in, dy, xv, gw->data().data(), true);
    }
    if (tp.input_count(id) > 2) {
      if (Tensor* gb = tp.grad_slot(id, 2)) {
        auto g = gb->data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < out_dim; ++j) g[j] += dy[r * out_dim + j];
      }
    }
  };
  if (has_bias) return t.record(op, std::move(out), {x, weight, bias}, fn);
  return t.record(op, std::move(out), {x, weight}, fn);
}

namespace {

template <typename Fwd, typename DA, typename DB>
Var binary(std::string_view op, const Var& a, const Var& b, Fwd fwd, DA da, DB db) {
  Tape& t = tape_of(op, a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const Bcast kind = broadcast_kind(op, A, B);
  const std::size_t bn = B.numel();
  Tensor out(A.shape());
  const auto av = A.data();
  const auto bv = B.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(av[i], bv[kind == Bcast::kSame ? i : i % bn]);
  return t.record(op, std::move(out), {a, b}, [kind, bn, da, db](Tape& tp, std::size_t id) {
    const auto gy = tp.out_grad(id).data();
    const auto xa = tp.value(tp.input_id(id, 0)).data();
    const auto xb = tp.value(tp.input_id(id, 1)).data();
    Tensor* ga = tp.grad_slot(id, 0);
    Tensor* gb = tp.grad_slot(id, 1);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const std::size_t j = kind == Bcast::kSame ? i : i % bn;
      if (ga) ga->data()[i] += gy[i] * da(xa[i], xb[j]);
      if (gb) gb->data()[j] += gy[i] * db(xa[i], xb[j]);
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(const Var& a, double s) {
  return unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  constexpr std::string_view op = "concat";
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape& t = tape_of(op, parts[0]);
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) shape_fail(op, s0, "axis " + std::to_string(axis) + " out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_fail(op, s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) shape_fail(op, s0, s);
    out_shape[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  const AxisGeometry g = axis_geometry(out_shape, axis);
  const std::size_t out_row = out_shape[axis] * g.inner;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].value().data();
    const std::size_t w = widths[k] * g.inner;
    for (std::size_t o = 0; o < g.outer; ++o)
      std::copy_n(src.begin() + o * w, w, out.data().begin() + o * out_row + offset);
    offset += w;
  }
  return t.record(op, std::move(out), parts, [widths, g, out_row](Tape& tp, std::size_t id) {
    const auto gy = tp.out_grad(id).data();
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t w = widths[k] * g.inner;
      if (Tensor* gk = tp.grad_slot(id, k)) {
        auto dst = gk->data();
        for (std::size_t o = 0; o < g.outer; ++o)
          for (std::size_t i = 0; i < w; ++i) dst[o * w + i] += gy[o * out_row + off + i];
      }
      off += w;
    }
  });
}

Var stack(std::span<const Var> rows) {
  constexpr std::string_view op = "stack";
  if (rows.empty()) throw ShapeError("stack: no operands");
  Tape& t = tape_of(op, rows[0]);
  const Shape& s0 = rows[0].shape();
  if (s0.size() != 1) shape_fail(op, s0, "operands must be rank-1");
  const std::size_t d = s0[0];
  Tensor out(Shape{rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].shape() != s0) shape_fail(op, s0, rows[r].shape());
    std::copy_n(rows[r].value().data().begin(), d, out.data().begin() + r * d);
  }
  return t.record(op, std::move(out), rows, [d](Tape& tp, std::size_t id) {
    const auto gy = tp.out_grad(id).data();
    for (std::size_t r = 0; r < tp.input_count(id); ++r) {
      if (Tensor* gr = tp.grad_slot(id, r)) {
        auto dst = gr->data();
        for (std::size_t i = 0; i < d; ++i) dst[i] += gy[r * d + i];
      }
    }
  });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  constexpr std::string_view op = "slice";
  Tape& t = tape_of(op, a);
  const Shape& s = a.shape();
  if (axis >= s.size()) shape_fail(op, s, "axis " + std::to_string(axis) + " out of range");
  if (begin >= end || end > s[axis]) {
    shape_fail(op, s, "bad range [" + std::to_string(begin) + ", " + std::to_string(end) + ")");
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const AxisGeometry g = axis_geometry(s, axis);
  const std::size_t in_row = s[axis] * g.inner;
  const std::size_t w = (end - begin) * g.inner;
  const std::size_t off = begin * g.inner;
  Tensor out(out_shape);
  const auto src = a.value().data();
  for (std::size_t o = 0; o < g.outer; ++o)
    std::copy_n(src.begin() + o * in_row + off, w, out.data().begin() + o * w);
  return t.record(op, std::move(out), {a}, [g, in_row, w, off](Tape& tp, std::size_t id) {
    Tensor* ga = tp.grad_slot(id, 0);
    if (!ga) return;
    const auto gy = tp.out_grad(id).data();
    auto dst = ga->data();
    for (std::size_t o = 0; o < g.outer; ++o)
      for (std::size_t i = 0; i < w; ++i) dst[o * in_row + off + i] += gy[o * w + i];
  });
}

Var row(const Var& a, std::size_t r) {
  if (a.shape().size() != 2) shape_fail("row", a.shape(), "operand must be rank-2");
  return reshape(slice(a, 0, r, r + 1), Shape{a.shape()[1]});
}

Var reshape(const Var& a, Shape shape) {
  constexpr std::string_view op = "reshape";
  Tape& t = tape_of(op, a);
  if (shape_numel(shape) != a.value().numel()) shape_fail(op, a.shape(), shape);
  return t.record(op, a.value().reshaped(std::move(shape)), {a}, [](Tape& tp, std::size_t id) {
    Tensor* ga = tp.grad_slot(id, 0);
    if (!ga) return;
    const auto gy = tp.out_grad(id).data();
    auto dst = ga->data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gy[i];
  });
}

Var transpose(const Var& a) {
  constexpr std::string_view op = "transpose";
  Tape& t = tape_of(op, a);
  if (a.shape().size() != 2) shape_fail(op, a.shape(), "operand must be rank-2");
  const std::size_t r = a.shape()[0];
  const std::size_t c = a.shape()[1];
  Tensor out(Shape{c, r});
  const auto src = a.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data()[j * r + i] = src[i * c + j];
  return t.record(op, std::move(out), {a}, [r, c](Tape& tp, std::size_t id) {
    Tensor* ga = tp.grad_slot(id, 0);
    if (!ga) return;
    const auto gy = tp.out_grad(id).data();
    auto dst = ga->data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += gy[j * r + i];
  });
}

Var tanh(const Var& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

namespace {
double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
  return unary(
      "sigmoid", a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softmax(const Var& a) {
  constexpr std::string_view op = "softmax";
  Tape& t = tape_of(op, a);
  const Tensor& X = a.value();
  if (X.rank() < 1 || X.rank() > 2) shape_fail(op, X.shape(), "operand must be rank-1 or rank-2");
  const std::size_t rows = X.rows();
  const std::size_t cols = X.cols();
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = X.data().data() + r * cols;
    double* y = out.data().data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) y[j] /= s;
  }
  return t.record(op, std::move(out), {a}, [rows, cols](Tape& tp, std::size_t id) {
    Tensor* ga = tp.grad_slot(id, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = tp.value(id).data().data() + r * cols;
      const double* gy = tp.out_grad(id).data().data() + r * cols;
      double* gx = ga->data().data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  });
}

Var log_softmax(const Var& a) {
  constexpr std::string_view op = "log_softmax";
  Tape& t = tape_of(op, a);
  const Tensor& X = a.value();
  if (X.rank() < 1 || X.rank() > 2) shape_fail(op, X.shape(), "operand must be rank-1 or rank-2");
  const std::size_t rows = X.rows();
  const std::size_t cols = X.cols();
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = X.data().data() + r * cols;
    double* y = out.data().data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
  }
  return t.record(op, std::move(out), {a}, [rows, cols](Tape& tp, std::size_t id) {
    Tensor* ga = tp.grad_slot(id, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = tp.value(id).data().data() + r * cols;
      const double* gy = tp.out_grad(id).data().data() + r * cols;
      double* gx = ga->data().data() + r * cols;
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += gy[j];
      for (std::size_t j = 0; j < cols; ++j) gx[j] += gy[j] - std::exp(y[j]) * s;
    }
  });
}

Var embedding_gather(const Var& table, std::span<const int> ids) {
  constexpr std::string_view op = "embedding_gather";
  Tape& t = tape_of(op, table);
  const Tensor& T = table.value();
  if (T.rank() != 2) shape_fail(op, T.shape(), "table must be rank-2");
  if (ids.empty()) shape_fail(op, T.shape(), "no ids");
  const std::size_t vocab = T.dim(0);
  const std::size_t dim = T.dim(1);
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor out(Shape{idv.size(), dim});
  for (std::size_t r = 0; r < idv.size(); ++r) {
    if (idv[r] < 0 || static_cast<std::size_t>(idv[r]) >= vocab) {
      throw ShapeError("embedding_gather: id " + std::to_string(idv[r]) +
                       " out of range for table " + shape_str(T.shape()));
    }
    std::copy_n(T.data().begin() + idv[r] * dim, dim, out.data().begin() + r * dim);
  }
  return t.record(op, std::move(out), {table}, [idv, dim](Tape& tp, std::size_t id) {
    Tensor* gt = tp.grad_slot(id, 0);
    if (!gt) return;
    const auto gy = tp.out_grad(id).data();
    auto dst = gt->data();
    for (std::size_t r = 0; r < idv.size(); ++r)
      for (std::size_t j = 0; j < dim; ++j) dst[idv[r] * dim + j] += gy[r * dim + j];
  });
}

Var embedding_row(const Var& table, int id) {
  const int ids[1] = {id};
  return reshape(embedding_gather(table, ids), Shape{table.shape().at(1)});
}

Var reduce_sum(const Var& a) {
  constexpr std::string_view op = "reduce_sum";
  Tape& t = tape_of(op, a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(op, Tensor::scalar(s), {a}, [](Tape& tp, std::size_t id) {
    Tensor* ga = tp.grad_slot(id, 0);
    if (!ga) return;
    const double g = tp.out_grad(id).item();
    for (double& v : ga->data()) v += g;
  });
}

Var reduce_mean(const Var& a) {
  constexpr std::string_view op = "reduce_mean";
  Tape& t = tape_of(op, a);
  const double n = static_cast<double>(a.value().numel());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(op, Tensor::scalar(s / n), {a}, [n](Tape& tp, std::size_t id) {
    Tensor* ga = tp.grad_slot(id, 0);
    if (!ga) return;
    const double g = tp.out_grad(id).item() / n;
    for (double& v : ga->data()) v += g;
  });
}

Var select(const Var& a, std::size_t index) {
  constexpr std::string_view op = "select";
  Tape& t = tape_of(op, a);
  if (index >= a.value().numel()) {
    shape_fail(op, a.shape(), "index " + std::to_string(index) + " out of range");
  }
  return t.record(op, Tensor::scalar(a.value()[index]), {a}, [index](Tape& tp, std::size_t id) {
    if (Tensor* ga = tp.grad_slot(id, 0)) (*ga)[index] += tp.out_grad(id).item();
  });
}

Var lstm_cell_state(const Var& gates, const Var& c_prev) {
  constexpr std::string_view op = "lstm_cell_state";
  Tape& t = tape_of(op, gates);
  const Tensor& Z = gates.value();
  const Tensor& C = c_prev.value();
  if (Z.rank() != 1 || C.rank() != 1 || Z.dim(0) != 4 * C.dim(0)) shape_fail(op, Z.shape(), C.shape());
  const std::size_t h = C.dim(0);
  Tensor out(Shape{h});
  for (std::size_t j = 0; j < h; ++j) {
    const double i = sigmoid_value(Z[j]);
    const double f = sigmoid_value(Z[h + j]);
    const double g = std::tanh(Z[2 * h + j]);
    out[j] = f * C[j] + i * g;
  }
  return t.record(op, std::move(out), {gates, c_prev}, [h](Tape& tp, std::size_t id) {
    const Tensor& z = tp.value(tp.input_id(id, 0));
    const Tensor& cp = tp.value(tp.input_id(id, 1));
    const auto gc = tp.out_grad(id).data();
    Tensor* gz = tp.grad_slot(id, 0);
    Tensor* gcp = tp.grad_slot(id, 1);
    for (std::size_t j = 0; j < h; ++j) {
      const double i = sigmoid_value(z[j]);
      const double f = sigmoid_value(z[h + j]);
      const double g = std::tanh(z[2 * h + j]);
      if (gz) {
        (*gz)[j] += gc[j] * g * i * (1.0 - i);
        (*gz)[h + j] += gc[j] * cp[j] * f * (1.0 - f);
        (*gz)[2 * h + j] += gc[j] * i * (1.0 - g * g);
      }
      if (gcp) (*gcp)[j] += gc[j] * f;
    }
  });
}

Var lstm_cell_output(const Var& gates, const Var& c) {
  constexpr std::string_view op = "lstm_cell_output";
  Tape& t = tape_of(op, gates);
  const Tensor& Z = gates.value();
  const Tensor& C = c.value();
  if (Z.rank() != 1 || C.rank() != 1 || Z.dim(0) != 4 * C.dim(0)) shape_fail(op, Z.shape(), C.shape());
  const std::size_t h = C.dim(0);
  Tensor out(Shape{h});
  for (std::size_t j = 0; j < h; ++j) out[j] = sigmoid_value(Z[3 * h + j]) * std::tanh(C[j]);
  return t.record(op, std::move(out), {gates, c}, [h](Tape& tp, std::size_t id) {
    const Tensor& z = tp.value(tp.input_id(id, 0));
    const Tensor& cv = tp.value(tp.input_id(id, 1));
    const auto gh = tp.out_grad(id).data();
    Tensor* gz = tp.grad_slot(id, 0);
    Tensor* gc = tp.grad_slot(id, 1);
    for (std::size_t j = 0; j < h; ++j) {
      const double o = sigmoid_value(z[3 * h + j]);
      const double tc = std::tanh(cv[j]);
      if (gz) (*gz)[3 * h + j] += gh[j] * tc * o * (1.0 - o);
      if (gc) (*gc)[j] += gh[j] * o * (1.0 - tc * tc);
    }
  });
}

}  // namespace fh
