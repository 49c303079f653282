#pragma once

// Minimal dense reverse-mode differentiation over rank <= 2 fp64 tensors.
//
// A Tape records every operation applied to Vars that require gradients.
// Parameters live outside the tape; their gradient buffers are accumulated
// in place by Tape::backward, so several tapes (or several backward passes)
// can contribute to one step before the optimizer consumes and clears them.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace disenpoi {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor row(std::initializer_list<double> values);
  static Tensor identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Constant CSR matrix used as the left operand of spmm.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_offsets = {0};
  std::vector<std::uint32_t> col_index;
  std::vector<double> values;

  /// Appends a row from (column, value) pairs; duplicate columns are summed.
  void push_row(std::vector<std::pair<std::uint32_t, double>> entries);
  std::size_t nnz() const { return values.size(); }
  Tensor to_dense() const;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Named, ordered parameter collection. Registration order is the manifest
/// order used by checkpoints and the optimizer. Addresses are stable.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, std::size_t rows, std::size_t cols);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t num_scalars() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  std::uint32_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  /// `record` = false evaluates values only (inference). `checked` makes
  /// every op reject non-finite outputs with NonFiniteValue.
  explicit Tape(bool record = true, bool checked = true) : record_(record), checked_(checked) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Differentiable leaf owned by the tape; read its gradient with grad().
  Var variable(Tensor value);
  /// Leaf bound to a parameter; gradients accumulate into p.grad. Repeated
  /// calls return the same node.
  Var param(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded node once in reverse
  /// insertion order. Throws NotScalar unless loss is 1 x 1.
  void backward(Var loss);

  /// Gradient of a node after backward (zeros if unreachable).
  Tensor grad(Var v) const;

  const Tensor& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  bool recording() const { return record_; }
  bool checked() const { return checked_; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of node `id`, allocated as zeros on first use.
  Tensor& grad_ref(std::uint32_t id);

  /// Appends an op result. `inputs` decide whether the node needs a backward
  /// function; `fn` is dropped when none of them requires grad.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Tensor value, std::span<const Var> inputs, BackwardFn fn);

 private:
  struct Node {
    Tensor value;
    const Tensor* external_value = nullptr;
    Tensor grad;
    Tensor* external_grad = nullptr;
    BackwardFn backward;
    bool requires_grad = false;
  };

  bool record_;
  bool checked_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

namespace ad {

inline constexpr double kLeakySlope = 0.01;

Var matmul(Var a, Var b);
Var transpose(Var a);
/// Same shape, or `b` a 1 x cols row broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scalar_mul(Var a, double s);
Var add_scalar(Var a, double s);
/// Elementwise product. `b` may be same-shaped, a 1 x cols row or a
/// rows x 1 column broadcast over `a`.
Var mul(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_row(Var a, std::size_t r);
/// out.row(k) = a.row(index[k]).
Var gather_rows(Var a, std::span<const std::uint32_t> index);
/// Column-wise mean / sum over rows: rows x c -> 1 x c.
Var mean_rows(Var a);
Var sum_rows(Var a);
/// Row-wise inner products of equally shaped a and b: rows x c -> rows x 1.
Var inner_product(Var a, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var leaky_relu(Var a, double slope = kLeakySlope);
Var softplus(Var a);
Var log(Var a);
/// Gradient passes where lo <= x <= hi, zero elsewhere.
Var clamp(Var a, double lo, double hi);
/// Constant sparse matrix times a.
Var spmm(std::shared_ptr<const SparseMatrix> s, Var a);

/// x * W^T for a weight stored output-major (W is out x in).
Var linear(Var x, Var w);

}  // namespace ad

/// Scalar function of several tensors, expressed on a tape.
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<Tensor> analytic;
  std::vector<Tensor> numeric;
};

/// Compares reverse-mode gradients of `f` at `point` with central finite
/// differences of step h. Relative error per element is
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const TapeFunction& f, const std::vector<Tensor>& point,
                           double h = 1e-5);

}  // namespace disenpoi
