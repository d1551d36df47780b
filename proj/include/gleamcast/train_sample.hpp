#pragma once

// Optimisation and sampling drivers: Adam, the epoch loop with the
// step-decay / late early-stopping schedule, the stochastic-gradient
// Nose-Hoover thermostat, leave-one-out bootstrap subsets and Monte Carlo
// weight dropout.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "gleamcast/autodiff.hpp"
#include "gleamcast/parallel.hpp"

namespace gleamcast::train {

struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;

  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update. Throws NumericError naming the first
/// non-finite gradient coordinate.
void adam_step(ad::ParamSet& params, std::span<const double> grads, AdamState& state, double lr);
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr);

struct TrainConfig {
  double base_lr = 1e-2;
  double decayed_lr = 1e-3;
  /// First epoch (1-based) trained at decayed_lr; early stopping is armed from here.
  std::size_t decay_epoch = 13;
  std::size_t patience = 3;
  std::size_t max_epochs = 40;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Minibatch objective: one item (training window) per step.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t train_size() const = 0;
  /// Loss of item idx; grad is overwritten with d loss / d params (flattened).
  virtual double loss_and_grad(const ad::ParamSet& params, std::size_t idx, std::vector<double>& grad,
                               par::Rng& rng) const = 0;
  virtual double validation_loss(const ad::ParamSet& params) const = 0;
  /// Factor converting one item's loss into its negative log-likelihood.
  virtual double nll_weight() const { return 1.0; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
  ad::ParamSet params;  // best-validation parameters
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
};

/// Epoch loop: shuffled single-item minibatches, lr = base_lr before
/// decay_epoch and decayed_lr from it on. From decay_epoch onwards training
/// stops once validation loss has not improved for `patience` epochs.
/// Throws NumericError with the epoch index if the loss becomes non-finite.
TrainResult train(const Objective& objective, ad::ParamSet init, const TrainConfig& cfg);

struct ThermostatState {
  std::vector<double> theta;
  std::vector<double> momentum;
  double xi = 0.0;
  double diffusion = 1.0;  // A
  double step = 5e-4;      // h
};

/// theta' = theta + p h
/// p'     = p - grad h - xi p h + noise,   noise ~ N(0, 2 A h) per coordinate
/// xi'    = xi + (p.p / d - 1) h
/// All right-hand sides use the pre-step state. Throws NumericError if the
/// result is non-finite.
void sgnht_step(ThermostatState& s, std::span<const double> grad, std::span<const double> noise);
void sgnht_step(ThermostatState& s, std::span<const double> grad, par::Rng& rng);

struct SgnhtConfig {
  std::size_t chains = 25;
  std::size_t epochs = 800;
  double burn_in_fraction = 0.5;
  double step = 5e-4;
  double diffusion = 1.0;
  double prior_std = 2.0;
  double init_std = 0.05;
  double momentum_init_std = 1.0;
  /// Post-burn-in early stop on validation loss; 0 disables.
  std::size_t patience = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Provenance { bootstrap, sgnht, dropout, restart };

struct PosteriorEnsemble {
  std::vector<std::vector<double>> members;
  Provenance provenance = Provenance::restart;
  std::vector<double> weights;  // empty means uniform

  std::size_t size() const { return members.size(); }
};

/// Runs independent thermostat chains on U = nll_weight * n * loss_item +
/// |theta|^2 / (2 prior_std^2) and keeps each chain's final state. Diverged
/// chains are dropped; more than half diverging is a NumericError.
PosteriorEnsemble sgnht_sample(const Objective& objective, const ad::ParamSet& shape, const SgnhtConfig& cfg,
                               par::Exec exec = par::Exec::parallel);

/// Leave-one-out subsets: subset i holds every index except i.
std::vector<std::vector<std::size_t>> bootstrap_replicates(std::size_t n);

/// Zeroes each non-bias weight with probability rate and scales survivors by 1 / (1 - rate).
ad::ParamSet dropout_weights(const ad::ParamSet& params, double rate, par::Rng& rng);

using PredictFn = std::function<std::vector<double>(const ad::ParamSet&)>;

/// One prediction per pass, each with an independent weight mask drawn
/// from stream (seed, pass).
std::vector<std::vector<double>> mc_dropout_predict(const ad::ParamSet& params, const PredictFn& predict,
                                                    double rate, std::size_t passes, std::uint64_t seed,
                                                    par::Exec exec = par::Exec::parallel);

}  // namespace gleamcast::train
