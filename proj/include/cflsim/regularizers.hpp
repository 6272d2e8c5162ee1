#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "cflsim/errors.hpp"
#include "cflsim/nn.hpp"
#include "cflsim/param_vector.hpp"
#include "cflsim/rng.hpp"

// Per-parameter importance machinery: synaptic-intelligence accumulation,
// consolidation and penalty, a diagonal-Fisher EWC baseline, and the
// proximal term.

namespace cflsim {

struct SiState {
  ParamVector s;                 // running contribution, current task
  ParamVector omega;             // consolidated importance, all past tasks
  ParamVector anchor;            // penalty reference weights
  ParamVector trajectory_start;  // weights when current-task accumulation began
  double eps = 1e-3;
  double reg_strength = 0.0;
};

inline SiState make_si_state(const ParamVector& params, double eps, double reg_strength) {
  if (!(eps > 0.0)) throw ConfigError("si eps must be positive");
  if (reg_strength < 0.0) throw ConfigError("reg_strength must be non-negative");
  SiState state;
  state.s = zeros_like(params);
  state.omega = zeros_like(params);
  state.anchor = params;
  state.trajectory_start = params;
  state.eps = eps;
  state.reg_strength = reg_strength;
  return state;
}

/// s_i += -grad_i * delta_i, with grad the data-loss gradient at the
/// pre-step point and delta the actual parameter change of that step.
/// The sign makes pure-descent contributions non-negative: -g * (-lr*g) = lr*g^2.
inline void si_accumulate(SiState& state, const ParamVector& grad, const ParamVector& delta) {
  state.s.require_same_layout(grad, "si_accumulate");
  state.s.require_same_layout(delta, "si_accumulate");
  for (std::size_t i = 0; i < state.s.size(); ++i) {
    state.s[i] += -grad[i] * delta[i];
  }
  state.s.check_finite("si_accumulate");
}

/// Fold the finished trajectory into omega:
///   omega_i += max(0, s_i) / ((w_end_i - start_i)^2 + eps)
/// then reset s and re-anchor at w_end.
inline void si_consolidate(SiState& state, const ParamVector& w_end) {
  state.s.require_same_layout(w_end, "si_consolidate");
  for (std::size_t i = 0; i < state.s.size(); ++i) {
    const double moved = w_end[i] - state.trajectory_start[i];
    state.omega[i] += std::max(0.0, state.s[i]) / (moved * moved + state.eps);
  }
  state.omega.check_finite("si_consolidate");
  state.s.fill(0.0);
  state.anchor = w_end;
  state.trajectory_start = w_end;
}

struct Penalty {
  double loss = 0.0;
  ParamVector grad;
};

namespace detail {

inline Penalty quadratic_penalty(const ParamVector& importance, const ParamVector& anchor,
                                 const ParamVector& w, double strength, const char* what) {
  w.require_same_layout(importance, what);
  w.require_same_layout(anchor, what);
  Penalty out;
  out.grad = ParamVector(w.layout());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double diff = w[i] - anchor[i];
    out.loss += strength * importance[i] * diff * diff;
    out.grad[i] = 2.0 * strength * importance[i] * diff;
  }
  out.grad.check_finite(what);
  return out;
}

}  // namespace detail

/// loss = reg_strength * sum_i omega_i (w_i - anchor_i)^2 and its gradient;
/// the caller adds both to the data loss.
inline Penalty si_penalty(const SiState& state, const ParamVector& w) {
  return detail::quadratic_penalty(state.omega, state.anchor, w, state.reg_strength,
                                   "si_penalty");
}

struct EwcState {
  ParamVector fisher;  // diagonal Fisher estimate, elementwise >= 0
  ParamVector anchor;
  double reg_strength = 0.0;
};

/// Diagonal empirical Fisher: mean of squared per-example log-likelihood
/// gradients at the model's current parameters. If n_samples covers the
/// whole batch, every example is used exactly once; otherwise a random
/// subset of n_samples examples is drawn.
inline EwcState ewc_estimate_fisher(const MlpModel& model, const Batch& data, int n_samples,
                                    std::uint64_t seed) {
  if (data.size() == 0) throw DataError("fisher estimation needs data");
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");

  std::vector<std::size_t> rows;
  if (static_cast<std::size_t>(n_samples) >= data.size()) {
    rows.resize(data.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  } else {
    auto rng = RngStream::derive(seed, stream_tag::kFisher);
    rows = rng.sample_without_replacement(data.size(), static_cast<std::size_t>(n_samples));
    std::sort(rows.begin(), rows.end());
  }

  EwcState state;
  state.fisher = zeros_like(model.params);
  state.anchor = model.params;
  Batch one;
  one.inputs.cols = data.inputs.cols;
  one.inputs.rows = 1;
  one.inputs.data.resize(data.inputs.cols);
  one.labels.resize(1);
  for (const std::size_t r : rows) {
    std::copy_n(data.inputs.data.data() + r * data.inputs.cols, data.inputs.cols,
                one.inputs.data.data());
    one.labels[0] = data.labels[r];
    const ParamVector g = backward(model, one);
    for (std::size_t i = 0; i < g.size(); ++i) state.fisher[i] += g[i] * g[i];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  state.fisher.scale(inv);
  return state;
}

inline Penalty ewc_penalty(const EwcState& state, const ParamVector& w) {
  return detail::quadratic_penalty(state.fisher, state.anchor, w, state.reg_strength,
                                   "ewc_penalty");
}

/// loss = (mu/2) ||w - w_global||^2, grad = mu (w - w_global)
inline Penalty prox_penalty(const ParamVector& w, const ParamVector& w_global, double mu) {
  w.require_same_layout(w_global, "prox_penalty");
  if (mu < 0.0) throw ConfigError("prox_mu must be non-negative");
  Penalty out;
  out.grad = ParamVector(w.layout());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double diff = w[i] - w_global[i];
    out.loss += 0.5 * mu * diff * diff;
    out.grad[i] = mu * diff;
  }
  out.grad.check_finite("prox_penalty");
  return out;
}

}  // namespace cflsim
