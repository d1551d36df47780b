#pragma once

// Diffusion-convolutional recurrent encoder-decoder.
//
// Each cell replaces the dense maps of a recurrent cell with diffusion
// convolutions over the location graph: for an input Z (P x C) the features
// [Z, FZ, ..., F^K Z] are concatenated and mapped by one stacked weight
// matrix ((K+1)C x out), which equals sum_k (F^k Z) W_k.
//
// The encoder consumes a window of residual frames starting from the zero
// state; the decoder starts from a zero "go" frame and feeds back either a
// scalar summary of its previous output or, with probability teacher_prob,
// the ground truth.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gleamcast/array2.hpp"
#include "gleamcast/autodiff.hpp"
#include "gleamcast/graph.hpp"
#include "gleamcast/parallel.hpp"

namespace gleamcast::dcrnn {

enum class FilterKind { random_walk, symmetric };
enum class CellKind { vanilla, gru };

/// How the decoder turns its P x heads output into the next P x 1 input.
struct Feedback {
  enum class Kind { column, spline_median };
  Kind kind = Kind::column;
  std::size_t column = 0;
};

struct ModelConfig {
  std::size_t hidden_units = 8;
  std::size_t diffusion_steps = 1;
  FilterKind filter = FilterKind::symmetric;
  CellKind cell = CellKind::gru;
  std::size_t horizon = 4;
  std::size_t window = 7;
  std::size_t input_features = 4;
  std::size_t output_heads = 1;
  Feedback feedback;
  double dropout_rate = 0.0;
  double init_std = 0.05;
  std::uint64_t seed = 0;

  /// Throws ContractError when an invariant is violated.
  void validate() const;
};

/// steps x locations x features, stored as one P x D frame per step.
struct ResidualTensor {
  std::vector<Array2> frames;

  static ResidualTensor zeros(std::size_t steps, std::size_t locations, std::size_t features);
  std::size_t steps() const { return frames.size(); }
  std::size_t locations() const { return frames.empty() ? 0 : frames[0].rows(); }
  std::size_t features() const { return frames.empty() ? 0 : frames[0].cols(); }
  double& at(std::size_t t, std::size_t p, std::size_t d) { return frames[t](p, d); }
  double at(std::size_t t, std::size_t p, std::size_t d) const { return frames[t](p, d); }
};

using HiddenState = Array2;

/// Filter matrix F for the configured kind.
Array2 filter_matrix(const graph::MobilityGraph& g, FilterKind kind);

/// sum_{k=0..K} (F^k X) W_k with W stacked by k along rows.
ad::Var diffusion_conv(ad::Var weights, ad::Var x, ad::Var filter, std::size_t steps);

struct CellVars {
  ad::Var gate_w, gate_b;
  ad::Var cand_w, cand_b;  // unused by the vanilla cell
};

struct BoundModel {
  CellVars encoder;
  CellVars decoder;
  ad::Var out_w, out_b;
  ad::Var filter;
};

class Model {
 public:
  Model(ModelConfig cfg, Array2 filter);
  Model(ModelConfig cfg, const graph::MobilityGraph& g);

  const ModelConfig& config() const { return cfg_; }
  const Array2& filter() const { return filter_; }
  std::size_t locations() const { return filter_.rows(); }

  /// Weights ~ N(0, init_std^2), biases zero; deterministic in seed.
  ad::ParamSet init_params(std::uint64_t seed) const;
  static std::size_t param_count(const ModelConfig& cfg);

  BoundModel bind(ad::Tape& tape, std::span<const ad::Var> leaves) const;

  ad::Var cell_step(const BoundModel& m, const CellVars& cell, ad::Var x, ad::Var h) const;

  /// Hidden state after the window, from zero (or h0).
  ad::Var encode(ad::Tape& tape, const BoundModel& m, const ResidualTensor& window,
                 const HiddenState* h0 = nullptr) const;

  /// One P x heads output per step. teacher is steps x P and required when
  /// teacher_prob > 0; rng is drawn from only when 0 < teacher_prob < 1.
  std::vector<ad::Var> decode(ad::Tape& tape, const BoundModel& m, ad::Var h, std::size_t steps,
                              const Array2* teacher, double teacher_prob, par::Rng* rng) const;

  /// P x 1 decoder input derived from a P x heads output.
  ad::Var feedback(ad::Var out) const;

  /// Evaluation-mode forward pass: cfg.horizon outputs, teacher_prob = 0.
  std::vector<Array2> predict(const ad::ParamSet& params, const ResidualTensor& window) const;

 private:
  void check_window(const ResidualTensor& window) const;

  ModelConfig cfg_;
  Array2 filter_;
};

}  // namespace gleamcast::dcrnn
