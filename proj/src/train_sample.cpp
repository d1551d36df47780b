#include "gleamcast/train_sample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gleamcast/errors.hpp"

namespace gleamcast::train {

namespace {

void adam_core(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const ad::ParamSet* names) {
  if (params.size() != grads.size())
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericError("adam_step: non-finite gradient for " +
                         (names ? names->coordinate_name(i) : "coordinate " + std::to_string(i)));
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = AdamState::beta1 * state.m[i] + (1.0 - AdamState::beta1) * g;
    state.v[i] = AdamState::beta2 * state.v[i] + (1.0 - AdamState::beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + AdamState::eps);
  }
}

}  // namespace

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr) {
  adam_core(params, grads, state, lr, nullptr);
}

void adam_step(ad::ParamSet& params, std::span<const double> grads, AdamState& state, double lr) {
  std::vector<double> flat = params.flatten();
  adam_core(flat, grads, state, lr, &params);
  params.assign(flat);
}

void TrainConfig::validate() const {
  if (!(decayed_lr > 0.0 && decayed_lr <= base_lr))
    throw ContractError("TrainConfig: need 0 < decayed_lr <= base_lr");
  if (patience < 1) throw ContractError("TrainConfig: patience must be >= 1");
  if (max_epochs < 1) throw ContractError("TrainConfig: max_epochs must be >= 1");
}

TrainResult train(const Objective& objective, ad::ParamSet init, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = objective.train_size();
  if (n == 0) throw ContractError("train: empty training split");

  par::Rng rng(cfg.seed);
  AdamState adam;
  TrainResult result;
  ad::ParamSet params = std::move(init);
  result.params = params;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::vector<std::size_t> order(n);
  std::vector<double> grad;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = epoch < cfg.decay_epoch ? cfg.base_lr : cfg.decayed_lr;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      const double loss = objective.loss_and_grad(params, idx, grad, rng);
      if (!std::isfinite(loss))
        throw NumericError("train: loss diverged at epoch " + std::to_string(epoch));
      adam_step(params, grad, adam, lr);
      total += loss;
    }
    const double val = objective.validation_loss(params);
    if (!std::isfinite(val))
      throw NumericError("train: validation loss diverged at epoch " + std::to_string(epoch));
    result.history.push_back({epoch, lr, total / static_cast<double>(n), val});
    result.stopped_epoch = epoch;

    if (val < best) {
      best = val;
      result.params = params;
      result.best_epoch = epoch;
      stale = 0;
    } else if (epoch > cfg.decay_epoch) {
      ++stale;
    }
    if (epoch >= cfg.decay_epoch && stale >= cfg.patience) break;
  }
  return result;
}

void sgnht_step(ThermostatState& s, std::span<const double> grad, std::span<const double> noise) {
  const std::size_t d = s.theta.size();
  if (s.momentum.size() != d || grad.size() != d || noise.size() != d)
    throw DimensionError("sgnht_step: inconsistent dimensions");
  if (!(s.step > 0.0)) throw ContractError("sgnht_step: step must be positive");
  if (!(s.diffusion >= 0.0)) throw ContractError("sgnht_step: diffusion must be nonnegative");
  const double h = s.step;
  double kinetic = 0.0;
  for (double p : s.momentum) kinetic += p * p;
  const double xi = s.xi;
  for (std::size_t i = 0; i < d; ++i) {
    const double p = s.momentum[i];
    s.theta[i] += p * h;
    s.momentum[i] = p - grad[i] * h - xi * p * h + noise[i];
  }
  s.xi = xi + (kinetic / static_cast<double>(d) - 1.0) * h;
  bool finite = std::isfinite(s.xi);
  for (std::size_t i = 0; i < d && finite; ++i) finite = std::isfinite(s.theta[i]) && std::isfinite(s.momentum[i]);
  if (!finite) throw NumericError("sgnht_step: non-finite state");
}

void sgnht_step(ThermostatState& s, std::span<const double> grad, par::Rng& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 * s.diffusion * s.step));
  std::vector<double> noise(s.theta.size());
  if (s.diffusion > 0.0)
    for (double& x : noise) x = normal(rng);
  sgnht_step(s, grad, noise);
}

void SgnhtConfig::validate() const {
  if (chains < 1) throw ContractError("SgnhtConfig: chains must be >= 1");
  if (epochs < 1) throw ContractError("SgnhtConfig: epochs must be >= 1");
  if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
    throw ContractError("SgnhtConfig: burn_in_fraction must be in [0, 1)");
  if (!(step > 0.0)) throw ContractError("SgnhtConfig: step must be positive");
  if (!(diffusion >= 0.0)) throw ContractError("SgnhtConfig: diffusion must be nonnegative");
  if (!(prior_std > 0.0)) throw ContractError("SgnhtConfig: prior_std must be positive");
}

PosteriorEnsemble sgnht_sample(const Objective& objective, const ad::ParamSet& shape, const SgnhtConfig& cfg,
                               par::Exec exec) {
  cfg.validate();
  const std::size_t n = objective.train_size();
  if (n == 0) throw ContractError("sgnht_sample: empty training split");
  const std::size_t d = shape.dim();
  const double prior_precision = std::isinf(cfg.prior_std) ? 0.0 : 1.0 / (cfg.prior_std * cfg.prior_std);
  const double likelihood_scale = objective.nll_weight() * static_cast<double>(n);
  const auto burn_in = static_cast<std::size_t>(std::floor(cfg.burn_in_fraction * static_cast<double>(cfg.epochs)));

  std::vector<std::vector<double>> finals(cfg.chains);
  std::vector<char> ok(cfg.chains, 0);

  par::for_each_member(cfg.chains, exec, [&](std::size_t chain) {
    par::Rng rng = par::make_rng(cfg.seed, chain);
    std::normal_distribution<double> init(0.0, 1.0);
    ThermostatState s;
    s.theta.resize(d);
    s.momentum.resize(d);
    for (double& x : s.theta) x = cfg.init_std * init(rng);
    for (double& x : s.momentum) x = cfg.momentum_init_std * init(rng);
    s.xi = cfg.diffusion;
    s.diffusion = cfg.diffusion;
    s.step = cfg.step;

    ad::ParamSet params = shape;
    std::vector<double> grad;
    std::vector<double> potential_grad(d);
    std::vector<std::size_t> order(n);
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    try {
      for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t idx : order) {
          params.assign(s.theta);
          const double loss = objective.loss_and_grad(params, idx, grad, rng);
          if (!std::isfinite(loss)) throw NumericError("sgnht_sample: non-finite loss");
          for (std::size_t i = 0; i < d; ++i)
            potential_grad[i] = likelihood_scale * grad[i] + prior_precision * s.theta[i];
          sgnht_step(s, potential_grad, rng);
        }
        if (epoch > burn_in && cfg.patience > 0) {
          params.assign(s.theta);
          const double val = objective.validation_loss(params);
          if (!std::isfinite(val)) throw NumericError("sgnht_sample: non-finite validation loss");
          if (val < best) {
            best = val;
            stale = 0;
          } else if (++stale >= cfg.patience) {
            break;
          }
        }
      }
      finals[chain] = s.theta;
      ok[chain] = 1;
    } catch (const NumericError&) {
      ok[chain] = 0;
    }
  });

  PosteriorEnsemble out;
  out.provenance = Provenance::sgnht;
  for (std::size_t c = 0; c < cfg.chains; ++c)
    if (ok[c]) out.members.push_back(std::move(finals[c]));
  const std::size_t diverged = cfg.chains - out.members.size();
  if (2 * diverged > cfg.chains)
    throw NumericError("sgnht_sample: " + std::to_string(diverged) + " of " + std::to_string(cfg.chains) +
                       " chains diverged");
  return out;
}

std::vector<std::vector<std::size_t>> bootstrap_replicates(std::size_t n) {
  if (n < 2) throw ContractError("bootstrap_replicates: need at least 2 training windows");
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) out[i].push_back(j);
  return out;
}

ad::ParamSet dropout_weights(const ad::ParamSet& params, double rate, par::Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout: rate must be in [0, 1)");
  ad::ParamSet out = params;
  if (rate == 0.0) return out;
  std::bernoulli_distribution drop(rate);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < out.count(); ++i) {
    if (out.is_bias(i)) continue;
    for (double& w : out[i].data()) w = drop(rng) ? 0.0 : w * keep_scale;
  }
  return out;
}

std::vector<std::vector<double>> mc_dropout_predict(const ad::ParamSet& params, const PredictFn& predict,
                                                    double rate, std::size_t passes, std::uint64_t seed,
                                                    par::Exec exec) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("mc_dropout_predict: rate must be in [0, 1)");
  if (passes < 1) throw ContractError("mc_dropout_predict: passes must be >= 1");
  std::vector<std::vector<double>> outputs(passes);
  par::for_each_member(passes, exec, [&](std::size_t pass) {
    par::Rng rng = par::make_rng(seed, pass);
    outputs[pass] = predict(dropout_weights(params, rate, rng));
  });
  return outputs;
}

}  // namespace gleamcast::train
