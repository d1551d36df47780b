#pragma once

// Reverse-mode automatic differentiation over dense Array2 values.
//
// A Tape records every operation in creation order, so walking it backwards
// is a valid topological order. Gradients are only materialised for nodes
// that depend on a leaf. A tape is confined to one thread; independent
// tapes may run concurrently.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gleamcast/array2.hpp"

namespace gleamcast::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Array2& value() const;
  const Array2& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

enum class Op : std::uint8_t {
  constant,
  leaf,
  matmul,
  filter_apply,
  add,
  add_row,
  sub,
  scale,
  sigmoid,
  tanh,
  hadamard,
  concat_cols,
  slice_cols,
  sum,
  mean,
  abs,
  relu,
  custom,
};

const char* op_name(Op op);

/// Vector-Jacobian product for a custom op: given the output gradient,
/// accumulate into the gradients of each input (null when not required).
using CustomVjp = std::function<void(const Array2& out_grad, std::span<Array2*> in_grads)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array2 value);
  Var leaf(Array2 value);

  /// Runs reverse accumulation from a 1x1 node. Throws ContractError for
  /// non-scalar roots. Gradients from a previous call are reset first.
  void backward(Var loss);

  const Array2& value(Var v) const { return nodes_[v.id].value; }
  const Array2& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  Op op(Var v) const { return nodes_[v.id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Node ids in the order backward visited them (for instrumentation).
  const std::vector<int>& last_backward_order() const { return visit_order_; }
  /// Parent ids of a node.
  std::vector<int> parents(Var v) const;

  // Internal construction hook used by the op functions below.
  Var record(Op op, Array2 value, std::initializer_list<Var> parents, double darg = 0.0,
             std::size_t iarg = 0, CustomVjp vjp = {});
  Var record_n(Op op, Array2 value, std::span<const Var> parents, std::size_t iarg = 0,
               CustomVjp vjp = {});

 private:
  struct Node {
    Array2 value;
    Array2 grad;
    Op op = Op::constant;
    bool requires_grad = false;
    std::vector<int> parents;
    double darg = 0.0;
    std::size_t iarg = 0;
    CustomVjp vjp;
  };

  void propagate(const Node& node);
  Array2& grad_buffer(int id);

  std::vector<Node> nodes_;
  std::vector<int> visit_order_;
};

// Elementary operations. All throw DimensionError naming the op and shapes
// when operands are not conformable.
Var matmul(Var a, Var b);
/// Matrix product whose rows are accumulated with canonical_sum, making the
/// result exactly equivariant under simultaneous permutation of a's rows and
/// columns with b's rows. Used for graph filters.
Var filter_apply(Var filter, Var x);
Var add(Var a, Var b);
/// a (n x m) plus a 1 x m row vector broadcast over rows.
Var add_row(Var a, Var row);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
Var sigmoid(Var a);
Var tanh(Var a);
Var hadamard(Var a, Var b);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t first, std::size_t count);
Var sum(Var a);
Var mean(Var a);
/// |x| with derivative 0 at x = 0.
Var abs(Var a);
/// max(x, 0) with derivative 0 at x = 0.
Var relu(Var a);
/// Op with user-supplied value and vector-Jacobian product.
Var custom(std::span<const Var> inputs, Array2 value, CustomVjp vjp);

/// Named collection of trainable arrays. Values are plain data; binding to a
/// tape creates leaf nodes for one forward/backward pass.
class ParamSet {
 public:
  std::size_t add(std::string name, Array2 value, bool is_bias = false);

  std::size_t count() const { return values_.size(); }
  /// Flattened dimension d.
  std::size_t dim() const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  bool is_bias(std::size_t i) const { return bias_[i]; }
  const Array2& operator[](std::size_t i) const { return values_[i]; }
  Array2& operator[](std::size_t i) { return values_[i]; }
  std::size_t index_of(const std::string& name) const;

  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  /// Name of the parameter holding flat coordinate k.
  std::string coordinate_name(std::size_t k) const;

  std::vector<Var> bind(Tape& tape) const;
  /// Gradients of bound leaves, flattened in parameter order.
  std::vector<double> gather_grads(const Tape& tape, std::span<const Var> leaves) const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_ && a.bias_ == b.bias_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Array2> values_;
  std::vector<bool> bias_;
};

/// Scalar-valued function of bound parameters, built on a fresh tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Max over coordinates of |analytic - central difference| / max(1, |central difference|).
double grad_check(const ScalarFn& f, const ParamSet& params, double step = 1e-5);

}  // namespace gleamcast::ad
