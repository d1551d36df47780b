#include "gleamcast/dcrnn.hpp"

#include <cmath>
#include <string>

#include "gleamcast/errors.hpp"
#include "gleamcast/uq_losses.hpp"

namespace gleamcast::dcrnn {

namespace {

std::size_t cell_param_count(const ModelConfig& cfg, std::size_t input) {
  const std::size_t u = cfg.hidden_units;
  const std::size_t per_gate = u * (input + u) * (cfg.diffusion_steps + 1) + u;
  return cfg.cell == CellKind::gru ? 3 * per_gate : per_gate;
}

void add_cell(ad::ParamSet& ps, const ModelConfig& cfg, const std::string& prefix, std::size_t input,
              std::normal_distribution<double>& normal, par::Rng& rng) {
  const std::size_t u = cfg.hidden_units;
  const std::size_t rows = (input + u) * (cfg.diffusion_steps + 1);
  auto weights = [&](std::size_t cols) {
    Array2 w(rows, cols);
    for (double& x : w.data()) x = normal(rng);
    return w;
  };
  const std::size_t gate_cols = cfg.cell == CellKind::gru ? 2 * u : u;
  ps.add(prefix + "/gate/W", weights(gate_cols));
  ps.add(prefix + "/gate/b", Array2(1, gate_cols), true);
  if (cfg.cell == CellKind::gru) {
    ps.add(prefix + "/cand/W", weights(u));
    ps.add(prefix + "/cand/b", Array2(1, u), true);
  }
}

void require_finite(const Array2& a, const char* what) {
  if (!a.all_finite()) throw NumericError(std::string("dcrnn: non-finite values in ") + what);
}

}  // namespace

void ModelConfig::validate() const {
  if (hidden_units < 1) throw ContractError("ModelConfig: hidden_units must be >= 1");
  if (horizon < 1) throw ContractError("ModelConfig: horizon must be >= 1");
  if (window < 1) throw ContractError("ModelConfig: window must be >= 1");
  if (input_features < 1 || output_heads < 1)
    throw ContractError("ModelConfig: feature counts must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ContractError("ModelConfig: dropout_rate must be in [0, 1)");
  if (!(init_std >= 0.0)) throw ContractError("ModelConfig: init_std must be >= 0");
  if (feedback.kind == Feedback::Kind::column && feedback.column >= output_heads)
    throw ContractError("ModelConfig: feedback column out of range");
  if (feedback.kind == Feedback::Kind::spline_median && output_heads != uq::kSplineParams)
    throw ContractError("ModelConfig: spline feedback needs 11 output heads");
}

ResidualTensor ResidualTensor::zeros(std::size_t steps, std::size_t locations, std::size_t features) {
  ResidualTensor t;
  t.frames.assign(steps, Array2(locations, features));
  return t;
}

Array2 filter_matrix(const graph::MobilityGraph& g, FilterKind kind) {
  return kind == FilterKind::random_walk ? graph::random_walk_matrix(g) : graph::sym_norm_filter(g);
}

ad::Var diffusion_conv(ad::Var weights, ad::Var x, ad::Var filter, std::size_t steps) {
  if (weights.rows() != x.cols() * (steps + 1))
    throw DimensionError("diffusion_conv: weights " + weights.value().shape_string() + " for input " +
                         x.value().shape_string() + " with K=" + std::to_string(steps));
  if (steps == 0) return ad::matmul(x, weights);
  std::vector<ad::Var> feats{x};
  feats.reserve(steps + 1);
  for (std::size_t k = 1; k <= steps; ++k) feats.push_back(ad::filter_apply(filter, feats.back()));
  return ad::matmul(ad::concat_cols(feats), weights);
}

Model::Model(ModelConfig cfg, Array2 filter) : cfg_(cfg), filter_(std::move(filter)) {
  cfg_.validate();
  if (filter_.rows() != filter_.cols() || filter_.rows() == 0)
    throw DimensionError("Model: filter must be square and nonempty, got " + filter_.shape_string());
}

Model::Model(ModelConfig cfg, const graph::MobilityGraph& g)
    : Model(cfg, filter_matrix(g, cfg.filter)) {}

std::size_t Model::param_count(const ModelConfig& cfg) {
  return cell_param_count(cfg, cfg.input_features) + cell_param_count(cfg, 1) +
         cfg.hidden_units * cfg.output_heads + cfg.output_heads;
}

ad::ParamSet Model::init_params(std::uint64_t seed) const {
  par::Rng rng(seed);
  std::normal_distribution<double> normal(0.0, cfg_.init_std);
  ad::ParamSet ps;
  add_cell(ps, cfg_, "encoder", cfg_.input_features, normal, rng);
  add_cell(ps, cfg_, "decoder", 1, normal, rng);
  Array2 w(cfg_.hidden_units, cfg_.output_heads);
  for (double& x : w.data()) x = normal(rng);
  ps.add("output/W", std::move(w));
  ps.add("output/b", Array2(1, cfg_.output_heads), true);
  return ps;
}

BoundModel Model::bind(ad::Tape& tape, std::span<const ad::Var> leaves) const {
  const std::size_t per_cell = cfg_.cell == CellKind::gru ? 4 : 2;
  if (leaves.size() != 2 * per_cell + 2)
    throw ContractError("Model::bind: expected " + std::to_string(2 * per_cell + 2) + " leaves, got " +
                        std::to_string(leaves.size()));
  BoundModel m;
  auto cell = [&](std::size_t at) {
    CellVars c{leaves[at], leaves[at + 1], {}, {}};
    if (per_cell == 4) {
      c.cand_w = leaves[at + 2];
      c.cand_b = leaves[at + 3];
    }
    return c;
  };
  m.encoder = cell(0);
  m.decoder = cell(per_cell);
  m.out_w = leaves[2 * per_cell];
  m.out_b = leaves[2 * per_cell + 1];
  m.filter = tape.constant(filter_);
  return m;
}

ad::Var Model::cell_step(const BoundModel& m, const CellVars& cell, ad::Var x, ad::Var h) const {
  const std::size_t u = cfg_.hidden_units;
  const std::size_t k = cfg_.diffusion_steps;
  if (x.rows() != locations() || h.rows() != locations() || h.cols() != u)
    throw DimensionError("cell_step: input " + x.value().shape_string() + ", state " +
                         h.value().shape_string() + " for " + std::to_string(locations()) +
                         " locations and " + std::to_string(u) + " units");
  require_finite(x.value(), "cell input");
  require_finite(h.value(), "hidden state");

  const ad::Var xh_parts[] = {x, h};
  const ad::Var xh = ad::concat_cols(xh_parts);
  if (cfg_.cell == CellKind::vanilla)
    return ad::sigmoid(ad::add_row(diffusion_conv(cell.gate_w, xh, m.filter, k), cell.gate_b));

  const ad::Var gates = ad::sigmoid(ad::add_row(diffusion_conv(cell.gate_w, xh, m.filter, k), cell.gate_b));
  const ad::Var reset = ad::slice_cols(gates, 0, u);
  const ad::Var update = ad::slice_cols(gates, u, u);
  const ad::Var xrh_parts[] = {x, ad::hadamard(reset, h)};
  const ad::Var cand =
      ad::tanh(ad::add_row(diffusion_conv(cell.cand_w, ad::concat_cols(xrh_parts), m.filter, k), cell.cand_b));
  // u*h + (1 - u)*c
  return ad::add(ad::hadamard(update, h), ad::sub(cand, ad::hadamard(update, cand)));
}

void Model::check_window(const ResidualTensor& window) const {
  if (window.steps() != cfg_.window)
    throw ContractError("encode: window has " + std::to_string(window.steps()) + " steps, expected " +
                        std::to_string(cfg_.window));
  if (window.locations() != locations() || window.features() != cfg_.input_features)
    throw DimensionError("encode: frames are " + window.frames[0].shape_string() + ", expected " +
                         std::to_string(locations()) + "x" + std::to_string(cfg_.input_features));
}

ad::Var Model::encode(ad::Tape& tape, const BoundModel& m, const ResidualTensor& window,
                      const HiddenState* h0) const {
  check_window(window);
  ad::Var h = tape.constant(h0 ? *h0 : Array2(locations(), cfg_.hidden_units));
  for (const Array2& frame : window.frames) h = cell_step(m, m.encoder, tape.constant(frame), h);
  return h;
}

ad::Var Model::feedback(ad::Var out) const {
  if (cfg_.feedback.kind == Feedback::Kind::spline_median) return uq::spline_quantile(out, 0.5);
  return ad::slice_cols(out, cfg_.feedback.column, 1);
}

std::vector<ad::Var> Model::decode(ad::Tape& tape, const BoundModel& m, ad::Var h, std::size_t steps,
                                   const Array2* teacher, double teacher_prob, par::Rng* rng) const {
  if (!(teacher_prob >= 0.0 && teacher_prob <= 1.0))
    throw ContractError("decode: teacher_prob must be in [0, 1]");
  if (teacher_prob > 0.0) {
    if (teacher == nullptr) throw ContractError("decode: teacher required when teacher_prob > 0");
    if (teacher->rows() != steps || teacher->cols() != locations())
      throw DimensionError("decode: teacher is " + teacher->shape_string() + ", expected " +
                           std::to_string(steps) + "x" + std::to_string(locations()));
  }
  if (teacher_prob > 0.0 && teacher_prob < 1.0 && rng == nullptr)
    throw ContractError("decode: rng required for stochastic teacher forcing");

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<ad::Var> outputs;
  outputs.reserve(steps);
  ad::Var x = tape.constant(Array2(locations(), 1));
  for (std::size_t s = 0; s < steps; ++s) {
    h = cell_step(m, m.decoder, x, h);
    const ad::Var out = ad::add_row(ad::matmul(h, m.out_w), m.out_b);
    outputs.push_back(out);
    if (s + 1 == steps) break;
    bool use_truth = teacher_prob >= 1.0;
    if (teacher_prob > 0.0 && teacher_prob < 1.0) use_truth = coin(*rng) < teacher_prob;
    if (use_truth) {
      Array2 truth(locations(), 1);
      for (std::size_t p = 0; p < locations(); ++p) truth(p, 0) = (*teacher)(s, p);
      x = tape.constant(std::move(truth));
    } else {
      x = feedback(out);
    }
  }
  return outputs;
}

std::vector<Array2> Model::predict(const ad::ParamSet& params, const ResidualTensor& window) const {
  ad::Tape tape;
  const auto leaves = params.bind(tape);
  const BoundModel m = bind(tape, leaves);
  const ad::Var h = encode(tape, m, window);
  std::vector<Array2> out;
  for (const ad::Var& v : decode(tape, m, h, cfg_.horizon, nullptr, 0.0, nullptr)) out.push_back(v.value());
  return out;
}

}  // namespace gleamcast::dcrnn
