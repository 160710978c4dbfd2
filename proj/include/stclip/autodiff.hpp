#pragma once

// Reverse-mode differentiation over Tensor values.
//
// A Tape records every op in forward order; backward() walks the records in
// exact reverse order. Parameters enter the tape as leaves. Trainable leaves
// accumulate into Parameter::grad; frozen leaves never receive a gradient, but
// ops that consume them still pass gradients through to their other inputs.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stclip/tensor.hpp"

namespace stclip {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // empty until the first backward touching this parameter
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool is_frozen = false)
      : name(std::move(n)), value(std::move(v)), frozen(is_frozen) {}

  void zero_grad() { grad = Tensor(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  /// A non-recording tape evaluates forward values only.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// One leaf per parameter per tape; repeated calls return the same Var.
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be 1x1.
  void backward(Var loss);

  // Used by op implementations.
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;
  Var push(Tensor value, bool requires_grad, BackwardFn fn);
  const Tensor& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  const Tensor& grad(std::uint32_t id) const { return nodes_[id].grad; }
  /// Gradient slot of an input; nullptr when that input does not need one.
  Tensor* grad_slot(std::uint32_t id);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_ids_;
};

// ---- core ops -------------------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x c row to every row of a.
Var add_row(Var a, Var bias_row);
Var scale(Var a, double s);
Var tanh(Var a);
/// tanh approximation of GELU; smooth everywhere, which keeps finite
/// differences honest.
Var gelu(Var a);
/// Row-wise layer norm with affine gain/bias rows (1 x c each).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Var a);
/// key_valid[j] == false sends column j to exactly zero in every row.
Var masked_softmax_rows(Var a, const std::vector<bool>& key_valid);
/// Column means: (r x c) -> (1 x c).
Var mean_rows(Var a);
Var sum_all(Var a);
Var squared_norm(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var select_row(Var a, std::size_t r);
/// Row `index` of an embedding table, as 1 x c.
Var gather_row(Var table, std::size_t index);
/// Both 1 x n; result 1 x 1. Zero-norm input is a NumericError.
Var cosine_similarity(Var a, Var b);
/// -ln(max(p[target], 1e-12)) for a 1 x K probability row.
Var cross_entropy(Var probs, std::size_t target);
/// Elementwise sum of same-shaped values.
Var sum(std::span<const Var> parts);

inline constexpr double kProbabilityFloor = 1e-12;

// ---- finite-difference oracle ---------------------------------------------

struct GradCheckParam {
  std::string name;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  /// Trainable parameters only; frozen ones never appear here.
  std::vector<GradCheckParam> params;
  /// Nonzero gradient entries found on frozen parameters (must stay 0).
  std::size_t frozen_grad_entries = 0;
};

/// Compares backward() against central differences
/// (f(x+eps) - f(x-eps)) / (2 eps) on every coordinate of every trainable
/// parameter in `params`. Relative error uses a 1e-8 denominator floor.
GradCheckReport grad_check(const std::function<Var(Tape&)>& scalar_fn,
                           std::span<Parameter* const> params, double eps = 1e-4);

double relative_error(double analytic, double numeric);

}  // namespace stclip
