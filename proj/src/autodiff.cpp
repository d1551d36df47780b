#include "gleamcast/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "gleamcast/errors.hpp"

namespace gleamcast::ad {

namespace {

Tape& tape_of(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (v.tape == nullptr || v.id < 0) throw ContractError("autodiff: unbound Var");
    if (t != nullptr && t != v.tape) throw ContractError("autodiff: Vars from different tapes");
    t = v.tape;
  }
  return *t;
}

[[noreturn]] void shape_fail(Op op, const Array2& a, const Array2& b) {
  throw DimensionError(std::string(op_name(op)) + ": incompatible shapes " + a.shape_string() +
                       " and " + b.shape_string());
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// out += a * b^T
void add_matmul_bt(Array2& out, const Array2& a, const Array2& b) {
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      auto ar = a.row(i);
      auto br = b.row(j);
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) += s;
    }
}

// out += a^T * b
void add_matmul_at(Array2& out, const Array2& a, const Array2& b) {
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ar = a.row(k);
    auto br = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * br[j];
    }
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::filter_apply: return "filter_apply";
    case Op::add: return "add";
    case Op::add_row: return "add_row";
    case Op::sub: return "sub";
    case Op::scale: return "scale";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::hadamard: return "hadamard";
    case Op::concat_cols: return "concat_cols";
    case Op::slice_cols: return "slice_cols";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::abs: return "abs";
    case Op::relu: return "relu";
    case Op::custom: return "custom";
  }
  return "?";
}

const Array2& Var::value() const { return tape->value(*this); }
const Array2& Var::grad() const { return tape->grad(*this); }

Var Tape::constant(Array2 value) { return record(Op::constant, std::move(value), {}); }

Var Tape::leaf(Array2 value) {
  Var v = record(Op::leaf, std::move(value), {});
  nodes_[v.id].requires_grad = true;
  return v;
}

Var Tape::record(Op op, Array2 value, std::initializer_list<Var> parents, double darg,
                 std::size_t iarg, CustomVjp vjp) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.darg = darg;
  n.iarg = iarg;
  n.vjp = std::move(vjp);
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    n.parents.push_back(p.id);
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record_n(Op op, Array2 value, std::span<const Var> parents, std::size_t iarg,
                   CustomVjp vjp) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.iarg = iarg;
  n.vjp = std::move(vjp);
  for (const Var& p : parents) {
    n.parents.push_back(p.id);
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

std::vector<int> Tape::parents(Var v) const { return nodes_[v.id].parents; }

const Array2& Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.requires_grad) throw ContractError("autodiff: node does not require grad");
  if (n.grad.empty() && !n.value.empty())
    throw ContractError("autodiff: grad requested before backward");
  return n.grad;
}

Array2& Tape::grad_buffer(int id) { return nodes_[id].grad; }

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss from another tape");
  const Array2& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1)
    throw ContractError("backward: loss must be 1x1, got " + lv.shape_string());
  for (Node& n : nodes_) {
    if (n.requires_grad)
      n.grad = Array2(n.value.rows(), n.value.cols());
    else
      n.grad = Array2();
  }
  visit_order_.clear();
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.parents.empty()) continue;
    visit_order_.push_back(id);
    propagate(n);
  }
}

void Tape::propagate(const Node& node) {
  const Array2& g = node.grad;
  auto needs = [&](std::size_t k) { return nodes_[node.parents[k]].requires_grad; };
  auto pval = [&](std::size_t k) -> const Array2& { return nodes_[node.parents[k]].value; };
  auto pgrad = [&](std::size_t k) -> Array2& { return grad_buffer(node.parents[k]); };

  switch (node.op) {
    case Op::constant:
    case Op::leaf:
      break;
    case Op::matmul:
    case Op::filter_apply:
      if (needs(0)) add_matmul_bt(pgrad(0), g, pval(1));
      if (needs(1)) add_matmul_at(pgrad(1), pval(0), g);
      break;
    case Op::add:
      for (std::size_t k = 0; k < 2; ++k)
        if (needs(k)) {
          Array2& pg = pgrad(k);
          for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
        }
      break;
    case Op::add_row:
      if (needs(0)) {
        Array2& pg = pgrad(0);
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      }
      if (needs(1)) {
        Array2& pg = pgrad(1);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) pg(0, c) += g(r, c);
      }
      break;
    case Op::sub:
      if (needs(0)) {
        Array2& pg = pgrad(0);
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      }
      if (needs(1)) {
        Array2& pg = pgrad(1);
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
      }
      break;
    case Op::scale: {
      Array2& pg = pgrad(0);
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += node.darg * g[i];
      break;
    }
    case Op::sigmoid: {
      Array2& pg = pgrad(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = node.value[i];
        pg[i] += g[i] * s * (1.0 - s);
      }
      break;
    }
    case Op::tanh: {
      Array2& pg = pgrad(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double t = node.value[i];
        pg[i] += g[i] * (1.0 - t * t);
      }
      break;
    }
    case Op::hadamard:
      if (needs(0)) {
        Array2& pg = pgrad(0);
        const Array2& b = pval(1);
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * b[i];
      }
      if (needs(1)) {
        Array2& pg = pgrad(1);
        const Array2& a = pval(0);
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * a[i];
      }
      break;
    case Op::concat_cols: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.parents.size(); ++k) {
        const std::size_t w = pval(k).cols();
        if (needs(k)) {
          Array2& pg = pgrad(k);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < w; ++c) pg(r, c) += g(r, offset + c);
        }
        offset += w;
      }
      break;
    }
    case Op::slice_cols: {
      Array2& pg = pgrad(0);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) pg(r, node.iarg + c) += g(r, c);
      break;
    }
    case Op::sum:
    case Op::mean: {
      Array2& pg = pgrad(0);
      const double w = node.op == Op::sum ? g[0] : g[0] / static_cast<double>(pg.size());
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += w;
      break;
    }
    case Op::abs: {
      Array2& pg = pgrad(0);
      const Array2& a = pval(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        pg[i] += a[i] > 0 ? g[i] : (a[i] < 0 ? -g[i] : 0.0);
      break;
    }
    case Op::relu: {
      Array2& pg = pgrad(0);
      const Array2& a = pval(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a[i] > 0) pg[i] += g[i];
      break;
    }
    case Op::custom: {
      std::vector<Array2*> in(node.parents.size(), nullptr);
      for (std::size_t k = 0; k < in.size(); ++k)
        if (needs(k)) in[k] = &pgrad(k);
      node.vjp(g, in);
      break;
    }
  }
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of({a, b});
  const Array2& av = a.value();
  const Array2& bv = b.value();
  if (av.cols() != bv.rows()) shape_fail(Op::matmul, av, bv);
  return t.record(Op::matmul, gleamcast::matmul(av, bv), {a, b});
}

Var filter_apply(Var filter, Var x) {
  Tape& t = tape_of({filter, x});
  const Array2& f = filter.value();
  const Array2& xv = x.value();
  if (f.cols() != xv.rows()) shape_fail(Op::filter_apply, f, xv);
  Array2 out(f.rows(), xv.cols());
  std::vector<double> terms;
  terms.reserve(f.cols());
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      terms.clear();
      for (std::size_t j = 0; j < f.cols(); ++j)
        if (f(i, j) != 0.0) terms.push_back(f(i, j) * xv(j, c));
      out(i, c) = canonical_sum(terms);
    }
  return t.record(Op::filter_apply, std::move(out), {filter, x});
}

Var add(Var a, Var b) {
  Tape& t = tape_of({a, b});
  const Array2& av = a.value();
  const Array2& bv = b.value();
  if (!av.same_shape(bv)) shape_fail(Op::add, av, bv);
  Array2 out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.record(Op::add, std::move(out), {a, b});
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of({a, row});
  const Array2& av = a.value();
  const Array2& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_fail(Op::add_row, av, rv);
  Array2 out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv(0, c);
  return t.record(Op::add_row, std::move(out), {a, row});
}

Var sub(Var a, Var b) {
  Tape& t = tape_of({a, b});
  const Array2& av = a.value();
  const Array2& bv = b.value();
  if (!av.same_shape(bv)) shape_fail(Op::sub, av, bv);
  Array2 out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.record(Op::sub, std::move(out), {a, b});
}

Var scale(Var a, double factor) {
  Tape& t = tape_of({a});
  Array2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return t.record(Op::scale, std::move(out), {a}, factor);
}

Var sigmoid(Var a) {
  Tape& t = tape_of({a});
  Array2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(out[i]);
  return t.record(Op::sigmoid, std::move(out), {a});
}

Var tanh(Var a) {
  Tape& t = tape_of({a});
  Array2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return t.record(Op::tanh, std::move(out), {a});
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of({a, b});
  const Array2& av = a.value();
  const Array2& bv = b.value();
  if (!av.same_shape(bv)) shape_fail(Op::hadamard, av, bv);
  Array2 out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record(Op::hadamard, std::move(out), {a, b});
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape* t = parts[0].tape;
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.tape != t) throw ContractError("concat_cols: Vars from different tapes");
    if (p.rows() != rows) shape_fail(Op::concat_cols, parts[0].value(), p.value());
    cols += p.cols();
  }
  Array2 out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Array2& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, offset + c) = v(r, c);
    offset += v.cols();
  }
  return t->record_n(Op::concat_cols, std::move(out), parts);
}

Var slice_cols(Var a, std::size_t first, std::size_t count) {
  Tape& t = tape_of({a});
  const Array2& v = a.value();
  if (first + count > v.cols() || count == 0)
    throw DimensionError("slice_cols: columns [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") of " + v.shape_string());
  Array2 out(v.rows(), count);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = v(r, first + c);
  return t.record(Op::slice_cols, std::move(out), {a}, 0.0, first);
}

Var sum(Var a) {
  Tape& t = tape_of({a});
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(Op::sum, Array2(1, 1, s), {a});
}

Var mean(Var a) {
  Tape& t = tape_of({a});
  const Array2& v = a.value();
  if (v.empty()) throw ContractError("mean: empty input");
  double s = 0.0;
  for (double x : v.data()) s += x;
  return t.record(Op::mean, Array2(1, 1, s / static_cast<double>(v.size())), {a});
}

Var abs(Var a) {
  Tape& t = tape_of({a});
  Array2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
  return t.record(Op::abs, std::move(out), {a});
}

Var relu(Var a) {
  Tape& t = tape_of({a});
  Array2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0 ? out[i] : 0.0;
  return t.record(Op::relu, std::move(out), {a});
}

Var custom(std::span<const Var> inputs, Array2 value, CustomVjp vjp) {
  if (inputs.empty()) throw ContractError("custom: no inputs");
  Tape* t = inputs[0].tape;
  for (const Var& v : inputs)
    if (v.tape != t) throw ContractError("custom: Vars from different tapes");
  return t->record_n(Op::custom, std::move(value), inputs, 0, std::move(vjp));
}

std::size_t ParamSet::add(std::string name, Array2 value, bool is_bias) {
  for (const auto& n : names_)
    if (n == name) throw ContractError("ParamSet: duplicate parameter " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  bias_.push_back(is_bias);
  return values_.size() - 1;
}

std::size_t ParamSet::dim() const {
  std::size_t d = 0;
  for (const auto& v : values_) d += v.size();
  return d;
}

std::size_t ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw ContractError("ParamSet: no parameter named " + name);
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> out;
  out.reserve(dim());
  for (const auto& v : values_) out.insert(out.end(), v.data().begin(), v.data().end());
  return out;
}

void ParamSet::assign(std::span<const double> flat) {
  if (flat.size() != dim())
    throw DimensionError("ParamSet::assign: got " + std::to_string(flat.size()) +
                         " values for dimension " + std::to_string(dim()));
  std::size_t k = 0;
  for (auto& v : values_)
    for (double& x : v.data()) x = flat[k++];
}

std::string ParamSet::coordinate_name(std::size_t k) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (k < values_[i].size()) {
      const std::size_t c = values_[i].cols();
      return names_[i] + "[" + std::to_string(k / c) + "," + std::to_string(k % c) + "]";
    }
    k -= values_[i].size();
  }
  return "<out of range>";
}

std::vector<Var> ParamSet::bind(Tape& tape) const {
  std::vector<Var> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(tape.leaf(v));
  return out;
}

std::vector<double> ParamSet::gather_grads(const Tape& tape, std::span<const Var> leaves) const {
  if (leaves.size() != values_.size())
    throw ContractError("ParamSet::gather_grads: leaf count mismatch");
  std::vector<double> out;
  out.reserve(dim());
  for (const Var& v : leaves) {
    const Array2& g = tape.grad(v);
    out.insert(out.end(), g.data().begin(), g.data().end());
  }
  return out;
}

double grad_check(const ScalarFn& f, const ParamSet& params, double step) {
  if (!(step > 0.0) || !std::isfinite(step))
    throw ContractError("grad_check: step must be positive and finite");

  std::vector<double> analytic;
  {
    Tape tape;
    auto leaves = params.bind(tape);
    Var loss = f(tape, leaves);
    if (!std::isfinite(loss.value()(0, 0))) throw NumericError("grad_check: non-finite loss");
    tape.backward(loss);
    analytic = params.gather_grads(tape, leaves);
  }

  auto eval = [&](const ParamSet& p) {
    Tape tape;
    auto leaves = p.bind(tape);
    const double v = f(tape, leaves).value()(0, 0);
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss at perturbed point");
    return v;
  };

  const std::vector<double> base = params.flatten();
  ParamSet probe = params;
  std::vector<double> x = base;
  double worst = 0.0;
  for (std::size_t k = 0; k < base.size(); ++k) {
    x[k] = base[k] + step;
    probe.assign(x);
    const double up = eval(probe);
    x[k] = base[k] - step;
    probe.assign(x);
    const double down = eval(probe);
    x[k] = base[k];
    const double fd = (up - down) / (2.0 * step);
    worst = std::max(worst, std::fabs(analytic[k] - fd) / std::max(1.0, std::fabs(fd)));
  }
  return worst;
}

}  // namespace gleamcast::ad
