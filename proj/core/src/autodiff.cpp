#include "disenpoi/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Core>

#include "disenpoi/error.hpp"
#include "disenpoi/parallel.hpp"

namespace disenpoi {
namespace {

constexpr std::size_t kElementChunk = 1 << 14;

std::string shape_str(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error(ErrorCode::ShapeMismatch,
              std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

template <typename F>
void for_each_index(std::size_t n, F&& f) {
  parallel_for(
      n,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) f(i);
      },
      kElementChunk);
}

// Row-parallel with a chunk size that keeps roughly kElementChunk work items
// per task.
template <typename F>
void for_each_row(std::size_t rows, std::size_t work_per_row, F&& f) {
  const std::size_t min_rows = std::max<std::size_t>(1, kElementChunk / std::max<std::size_t>(1, work_per_row));
  parallel_for(
      rows,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) f(i);
      },
      min_rows);
}

// c(n x m) = a(n x k) * b(k x m), accumulating into c when `accumulate`.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

// Products run as one single-threaded Eigen call over the whole operand, so
// the summation order never depends on the worker count.
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m, bool accumulate) {
  const auto rn = static_cast<Eigen::Index>(n), rk = static_cast<Eigen::Index>(k),
             rm = static_cast<Eigen::Index>(m);
  MutMap out(c, rn, rm);
  if (accumulate) {
    out.noalias() += ConstMap(a, rn, rk) * ConstMap(b, rk, rm);
  } else {
    out.noalias() = ConstMap(a, rn, rk) * ConstMap(b, rk, rm);
  }
}

// c(n x k) += g(n x m) * b(k x m)^T
void gemm_nt_acc(const double* g, const double* b, double* c, std::size_t n, std::size_t m,
                 std::size_t k) {
  const auto rn = static_cast<Eigen::Index>(n), rk = static_cast<Eigen::Index>(k),
             rm = static_cast<Eigen::Index>(m);
  MutMap(c, rn, rk).noalias() += ConstMap(g, rn, rm) * ConstMap(b, rk, rm).transpose();
}

// c(k x m) += a(n x k)^T * g(n x m)
void gemm_tn_acc(const double* a, const double* g, double* c, std::size_t n, std::size_t k,
                 std::size_t m) {
  const auto rn = static_cast<Eigen::Index>(n), rk = static_cast<Eigen::Index>(k),
             rm = static_cast<Eigen::Index>(m);
  MutMap(c, rk, rm).noalias() += ConstMap(a, rn, rk).transpose() * ConstMap(g, rn, rm);
}

Tensor transposed(const Tensor& a) {
  Tensor t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

enum class Broadcast { Same, Row, Col };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b, bool allow_col) {
  if (a.same_shape(b)) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  if (allow_col && b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
  shape_error(op, a, b);
}

inline std::size_t bindex(Broadcast kind, std::size_t idx, std::size_t cols) {
  switch (kind) {
    case Broadcast::Same: return idx;
    case Broadcast::Row: return idx % cols;
    case Broadcast::Col: return idx / cols;
  }
  return idx;
}

// Reduces a gradient shaped like `a` onto the broadcast operand.
void reduce_into(Broadcast kind, const Tensor& g, Tensor& gb, const Tensor* scale) {
  const std::size_t cols = g.cols();
  if (kind == Broadcast::Same) {
    if (scale == nullptr) {
      for_each_index(g.size(), [&](std::size_t i) { gb[i] += g[i]; });
    } else {
      for_each_index(g.size(), [&](std::size_t i) { gb[i] += g[i] * (*scale)[i]; });
    }
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = scale == nullptr ? g[i] : g[i] * (*scale)[i];
    gb[bindex(kind, i, cols)] += v;
  }
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for_each_index(x.size(), [&](std::size_t i) { out[i] = fwd(x[i]); });
  const std::uint32_t ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, deriv](Tape& t, std::uint32_t self) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(ia);
    for_each_index(x.size(), [&](std::size_t i) { ga[i] += g[i] * deriv(x[i], y[i]); });
  });
}

Tape* tape_of(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of zero tensors");
  return parts.front().tape();
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor / SparseMatrix / ParameterSet

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                              " does not match " + std::to_string(rows) + "x" +
                                              std::to_string(cols));
  }
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor(1, values.size(), std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void SparseMatrix::push_row(std::vector<std::pair<std::uint32_t, double>> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (k > 0 && entries[k].first == entries[k - 1].first) {
      values.back() += entries[k].second;
      continue;
    }
    if (entries[k].first >= cols) {
      throw Error(ErrorCode::ShapeMismatch, "sparse column index out of range");
    }
    col_index.push_back(entries[k].first);
    values.push_back(entries[k].second);
  }
  row_offsets.push_back(values.size());
  ++rows;
}

Tensor SparseMatrix::to_dense() const {
  Tensor d(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) d(r, col_index[k]) += values[k];
  }
  return d;
}

Parameter& ParameterSet::add(const std::string& name, std::size_t rows, std::size_t cols) {
  if (by_name_.count(name) != 0) {
    throw Error(ErrorCode::InvalidConfig, "duplicate parameter name " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(rows, cols);
  p->grad = Tensor(rows, cols);
  by_name_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error(ErrorCode::ManifestMismatch, "no parameter " + name);
  return *params_[it->second];
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error(ErrorCode::ManifestMismatch, "no parameter " + name);
  return *params_[it->second];
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external_value != nullptr ? *n.external_value : n.value;
}

Tensor& Tape::grad_ref(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.external_grad != nullptr) return *n.external_grad;
  if (n.grad.empty()) {
    const Tensor& v = value(id);
    n.grad = Tensor(v.rows(), v.cols());
  }
  return n.grad;
}

Var Tape::constant(Tensor value) {
  if (checked_ && !value.all_finite()) throw Error(ErrorCode::NonFiniteValue, "constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::variable(Tensor value) {
  Var v = constant(std::move(value));
  nodes_[v.id()].requires_grad = record_;
  return v;
}

Var Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.external_value = &p.value;
  if (record_) {
    n.external_grad = &p.grad;
    n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::push(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (checked_ && !value.all_finite()) {
    throw Error(ErrorCode::NonFiniteValue, "op produced a non-finite value at node " +
                                               std::to_string(nodes_.size()));
  }
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& v : inputs) {
      if (v.tape() != this) throw Error(ErrorCode::ShapeMismatch, "inputs from another tape");
      n.requires_grad = n.requires_grad || requires_grad(v.id());
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::backward(Var loss) {
  const Tensor& lv = loss.value();
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw Error(ErrorCode::NotScalar, "loss has shape " + shape_str(lv));
  }
  if (!requires_grad(loss.id())) return;
  grad_ref(loss.id())[0] += 1.0;
  for (std::size_t k = nodes_.size(); k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.backward) continue;
    if (n.grad.empty()) continue;  // unreachable from the loss
    n.backward(*this, static_cast<std::uint32_t>(k));
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.external_grad != nullptr) return *n.external_grad;
  if (n.grad.empty()) {
    const Tensor& val = value(v.id());
    return Tensor(val.rows(), val.cols());
  }
  return n.grad;
}

// ---------------------------------------------------------------------------
// Primitives

namespace ad {

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) shape_error("matmul", x, y);
  Tensor out(x.rows(), y.cols());
  gemm_nn(x.data(), y.data(), out.data(), x.rows(), x.cols(), y.cols(), false);
  const auto ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    const Tensor& g = t.grad_ref(self);
    if (t.requires_grad(ia)) {
      gemm_nt_acc(g.data(), y.data(), t.grad_ref(ia).data(), g.rows(), g.cols(), x.cols());
    }
    if (t.requires_grad(ib)) {
      gemm_tn_acc(x.data(), g.data(), t.grad_ref(ib).data(), x.rows(), x.cols(), g.cols());
    }
  });
}

Var transpose(Var a) {
  const auto ia = a.id();
  return a.tape()->push(transposed(a.value()), {a}, [ia](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
    }
  });
}

namespace {

Var add_or_sub(Var a, Var b, double sign, const char* name) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast kind = broadcast_kind(name, x, y, false);
  Tensor out(x.rows(), x.cols());
  const std::size_t cols = x.cols();
  for_each_index(x.size(), [&](std::size_t i) { out[i] = x[i] + sign * y[bindex(kind, i, cols)]; });
  const auto ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib, sign, kind](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_ref(ia);
      for_each_index(g.size(), [&](std::size_t i) { ga[i] += g[i]; });
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_ref(ib);
      if (sign > 0) {
        reduce_into(kind, g, gb, nullptr);
      } else {
        Tensor neg(g.rows(), g.cols());
        for_each_index(g.size(), [&](std::size_t i) { neg[i] = -g[i]; });
        reduce_into(kind, neg, gb, nullptr);
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return add_or_sub(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_or_sub(a, b, -1.0, "sub"); }

Var scalar_mul(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast kind = broadcast_kind("mul", x, y, true);
  Tensor out(x.rows(), x.cols());
  const std::size_t cols = x.cols();
  for_each_index(x.size(), [&](std::size_t i) { out[i] = x[i] * y[bindex(kind, i, cols)]; });
  const auto ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib, kind](Tape& t, std::uint32_t self) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    const Tensor& g = t.grad_ref(self);
    const std::size_t cols = x.cols();
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_ref(ia);
      for_each_index(g.size(), [&](std::size_t i) { ga[i] += g[i] * y[bindex(kind, i, cols)]; });
    }
    if (t.requires_grad(ib)) reduce_into(kind, g, t.grad_ref(ib), &x);
  });
}

Var concat_rows(std::span<const Var> parts) {
  Tape* tape = tape_of(parts);
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
    ids.push_back(p.id());
  }
  return tape->push(std::move(out), parts, [ids](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_ref(self);
    std::size_t offset = 0;
    for (auto id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.requires_grad(id)) {
        Tensor& gi = t.grad_ref(id);
        for (std::size_t k = 0; k < n; ++k) gi[k] += g[offset + k];
      }
      offset += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  Tape* tape = tape_of(parts);
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<std::uint32_t> ids;
  std::size_t c0 = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(v.data() + r * v.cols(), v.data() + (r + 1) * v.cols(), out.data() + r * cols + c0);
    }
    c0 += v.cols();
    ids.push_back(p.id());
  }
  return tape->push(std::move(out), parts, [ids](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_ref(self);
    std::size_t c0 = 0;
    for (auto id : ids) {
      const std::size_t w = t.value(id).cols();
      if (t.requires_grad(id)) {
        Tensor& gi = t.grad_ref(id);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < w; ++c) gi(r, c) += g(r, c0 + c);
        }
      }
      c0 += w;
    }
  });
}

Var slice_row(Var a, std::size_t r) {
  const Tensor& x = a.value();
  if (r >= x.rows()) throw Error(ErrorCode::ShapeMismatch, "slice_row index out of range");
  Tensor out(1, x.cols(), std::vector<double>(x.data() + r * x.cols(), x.data() + (r + 1) * x.cols()));
  const auto ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, r](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g[c];
  });
}

Var gather_rows(Var a, std::span<const std::uint32_t> index) {
  const Tensor& x = a.value();
  const std::size_t cols = x.cols();
  for (auto r : index) {
    if (r >= x.rows()) throw Error(ErrorCode::ShapeMismatch, "gather_rows index out of range");
  }
  Tensor out(index.size(), cols);
  for_each_row(index.size(), cols, [&](std::size_t k) {
    std::copy(x.data() + index[k] * cols, x.data() + (index[k] + 1) * cols, out.data() + k * cols);
  });
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  const auto ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, idx = std::move(idx)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(ia);
    const std::size_t cols = g.cols();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      double* dst = ga.data() + idx[k] * cols;
      const double* src = g.data() + k * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

namespace {

Var reduce_rows(Var a, double scale) {
  const Tensor& x = a.value();
  Tensor out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  }
  for (std::size_t c = 0; c < x.cols(); ++c) out[c] *= scale;
  const auto ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, scale](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += scale * g[c];
    }
  });
}

}  // namespace

Var mean_rows(Var a) {
  if (a.rows() == 0) throw Error(ErrorCode::ShapeMismatch, "mean_rows of an empty tensor");
  return reduce_rows(a, 1.0 / static_cast<double>(a.rows()));
}

Var sum_rows(Var a) { return reduce_rows(a, 1.0); }

Var inner_product(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!x.same_shape(y)) shape_error("inner_product", x, y);
  Tensor out(x.rows(), 1);
  const std::size_t cols = x.cols();
  for_each_row(x.rows(), cols, [&](std::size_t r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x(r, c) * y(r, c);
    out[r] = s;
  });
  const auto ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    const Tensor& g = t.grad_ref(self);
    const std::size_t cols = x.cols();
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_ref(ia);
      for_each_index(x.size(), [&](std::size_t i) { ga[i] += g[i / cols] * y[i]; });
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_ref(ib);
      for_each_index(x.size(), [&](std::size_t i) { gb[i] += g[i / cols] * x[i]; });
    }
  });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var leaky_relu(Var a, double slope) {
  return unary(a, [slope](double x) { return x > 0 ? x : slope * x; },
               [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var softplus(Var a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var spmm(std::shared_ptr<const SparseMatrix> s, Var a) {
  const Tensor& x = a.value();
  if (s->cols != x.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "spmm: sparse " + std::to_string(s->rows) + "x" +
                                              std::to_string(s->cols) + " vs " + shape_str(x));
  }
  const std::size_t cols = x.cols();
  Tensor out(s->rows, cols);
  for_each_row(s->rows, cols * 4, [&](std::size_t r) {
    double* dst = out.data() + r * cols;
    for (std::size_t k = s->row_offsets[r]; k < s->row_offsets[r + 1]; ++k) {
      const double v = s->values[k];
      const double* src = x.data() + static_cast<std::size_t>(s->col_index[k]) * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += v * src[c];
    }
  });
  const auto ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, s](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(ia);
    const std::size_t cols = g.cols();
    for (std::size_t r = 0; r < s->rows; ++r) {
      const double* src = g.data() + r * cols;
      for (std::size_t k = s->row_offsets[r]; k < s->row_offsets[r + 1]; ++k) {
        const double v = s->values[k];
        double* dst = ga.data() + static_cast<std::size_t>(s->col_index[k]) * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += v * src[c];
      }
    }
  });
}

Var linear(Var x, Var w) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.cols() != wv.cols()) shape_error("linear", xv, wv);
  const std::size_t n = xv.rows(), k = xv.cols(), m = wv.rows();
  Tensor out(n, m);
  gemm_nt_acc(xv.data(), wv.data(), out.data(), n, k, m);
  const auto ix = x.id(), iw = w.id();
  return x.tape()->push(std::move(out), {x, w}, [ix, iw, n, k, m](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_ref(self);
    // dx += g * w, dw += g^T * x
    if (t.requires_grad(ix)) {
      gemm_nn(g.data(), t.value(iw).data(), t.grad_ref(ix).data(), n, m, k, true);
    }
    if (t.requires_grad(iw)) {
      gemm_tn_acc(g.data(), t.value(ix).data(), t.grad_ref(iw).data(), n, m, k);
    }
  });
}

}  // namespace ad

// ---------------------------------------------------------------------------

GradCheckResult grad_check(const TapeFunction& f, const std::vector<Tensor>& point, double h) {
  GradCheckResult result;
  {
    Tape tape(true, true);
    std::vector<Var> vars;
    for (const auto& p : point) vars.push_back(tape.variable(p));
    Var y = f(tape, vars);
    tape.backward(y);
    for (const Var& v : vars) result.analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor>& at) {
    Tape tape(false, false);
    std::vector<Var> vars;
    for (const auto& p : at) vars.push_back(tape.constant(p));
    Var y = f(tape, vars);
    if (y.rows() != 1 || y.cols() != 1) throw Error(ErrorCode::NotScalar, "grad_check target");
    return y.value()[0];
  };
  std::vector<Tensor> probe = point;
  for (std::size_t k = 0; k < point.size(); ++k) {
    Tensor num(point[k].rows(), point[k].cols());
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + h;
      const double fp = eval(probe);
      probe[k][i] = orig - h;
      const double fm = eval(probe);
      probe[k][i] = orig;
      num[i] = (fp - fm) / (2.0 * h);
      const double a = result.analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(num[i]), 1e-8});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - num[i]) / denom);
    }
    result.numeric.push_back(std::move(num));
  }
  return result;
}

}  // namespace disenpoi
