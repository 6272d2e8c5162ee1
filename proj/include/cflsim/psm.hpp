#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cflsim/errors.hpp"
#include "cflsim/nn.hpp"
#include "cflsim/param_vector.hpp"
#include "cflsim/regularizers.hpp"
#include "cflsim/rng.hpp"

// Personalized surrogate model: a throwaway copy of the global model that
// is trained on the outgoing task with a q(lambda)-weighted pull back to
// the global weights. Its trajectory, not the model itself, is the
// product: it supplies per-parameter contributions that blend local and
// global knowledge before consolidation.

namespace cflsim {

struct PsmConfig {
  double lambda = 0.5;  // in (0,1); small -> strong pull to the global model
  double eta = 0.05;    // surrogate learning rate
  int iters = 100;      // local iterations
  int batch_size = 32;
};

inline double q_of_lambda(double lambda) {
  if (!(lambda > 0.0) || !(lambda < 1.0)) {
    throw ConfigError("lambda must lie in (0,1), got " + std::to_string(lambda));
  }
  return (1.0 - lambda) / (2.0 * lambda);
}

inline void validate_psm_config(const PsmConfig& cfg) {
  q_of_lambda(cfg.lambda);
  if (!(cfg.eta >= 0.0)) throw ConfigError("psm eta must be non-negative");
  if (cfg.iters < 1) throw ConfigError("psm iters must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("psm batch_size must be >= 1");
}

struct PsmState {
  ParamVector v;        // surrogate weights after training
  ParamVector s_acc;    // contributions accumulated along the trajectory
  ParamVector v_start;  // initial point (the global model)
};

/// Core surrogate iteration, generic over the data-loss gradient. Each
/// step moves v by -eta * (grad_fn(v) + q * (v - w_global)) and credits
/// s_acc with -g_data * delta using the actual parameter change.
template <typename GradFn>
PsmState run_psm_iterations(const ParamVector& w_global, GradFn&& grad_fn, double q, double eta,
                            int iters) {
  PsmState state;
  state.v = w_global;
  state.v_start = w_global;
  state.s_acc = zeros_like(w_global);
  for (int it = 0; it < iters; ++it) {
    const ParamVector g_data = grad_fn(state.v);
    state.v.require_same_layout(g_data, "run_psm_iterations");
    for (std::size_t i = 0; i < state.v.size(); ++i) {
      const double pull = q * (state.v[i] - w_global[i]);
      const double delta = -eta * (g_data[i] + pull);
      state.s_acc[i] += -g_data[i] * delta;
      state.v[i] += delta;
    }
    state.v.check_finite("run_psm_iterations");
  }
  return state;
}

/// Train the surrogate on the outgoing task's local samples, starting from
/// the broadcast global model. Purely local: exactly cfg.iters gradient
/// steps, no communication.
inline PsmState train_psm(const ParamVector& w_global, const MlpModel& model_template,
                          const Batch& local_train, const PsmConfig& cfg, std::uint64_t seed) {
  validate_psm_config(cfg);
  if (local_train.size() == 0) throw DataError("train_psm needs local samples");
  validate_batch(local_train, model_template.output_dim());
  w_global.require_same_layout(model_template.params, "train_psm");

  const double q = q_of_lambda(cfg.lambda);
  auto rng = RngStream::derive(seed, stream_tag::kPsm);
  MlpModel scratch = model_template;
  const std::size_t n = local_train.size();
  const std::size_t dim = local_train.inputs.cols;
  const std::size_t batch_n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);

  Batch minibatch;
  minibatch.inputs.cols = dim;
  minibatch.inputs.rows = batch_n;
  minibatch.inputs.data.resize(batch_n * dim);
  minibatch.labels.resize(batch_n);

  auto grad_fn = [&](const ParamVector& v) {
    for (std::size_t b = 0; b < batch_n; ++b) {
      const std::size_t r = static_cast<std::size_t>(rng.below(n));
      std::copy_n(local_train.inputs.data.data() + r * dim, dim,
                  minibatch.inputs.data.data() + b * dim);
      minibatch.labels[b] = local_train.labels[r];
    }
    scratch.params = v;
    return backward(scratch, minibatch);
  };
  return run_psm_iterations(w_global, grad_fn, q, cfg.eta, cfg.iters);
}

/// Consolidate the surrogate trajectory into the client's importance state:
///   omega_i += max(0, s_acc_i) / ((v_i - v_start_i)^2 + eps)
/// and re-anchor the penalty at the global model the surrogate started
/// from. The surrogate itself is discarded by the caller afterwards.
inline void psm_contribution_handoff(const PsmState& psm, SiState& si) {
  si.omega.require_same_layout(psm.s_acc, "psm_contribution_handoff");
  si.omega.require_same_layout(psm.v, "psm_contribution_handoff");
  for (std::size_t i = 0; i < si.omega.size(); ++i) {
    const double moved = psm.v[i] - psm.v_start[i];
    si.omega[i] += std::max(0.0, psm.s_acc[i]) / (moved * moved + si.eps);
  }
  si.omega.check_finite("psm_contribution_handoff");
  si.anchor = psm.v_start;
  si.trajectory_start = psm.v_start;
  si.s.fill(0.0);
}

/// Closed-form minimizer of 1/2 (v-a)^T A (v-a) + q(lambda)/2 ||v-w_hat||^2
/// for diagonal positive A:  v_i = (A_i a_i + q w_hat_i) / (A_i + q).
inline std::vector<double> solve_psm_quadratic(const std::vector<double>& a_diag,
                                               const std::vector<double>& a,
                                               const std::vector<double>& w_hat, double lambda) {
  if (a_diag.size() != a.size() || a.size() != w_hat.size()) {
    throw ShapeError("solve_psm_quadratic: size mismatch");
  }
  const double q = q_of_lambda(lambda);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a_diag[i] > 0.0)) throw ConfigError("quadratic diagonal must be positive");
    v[i] = (a_diag[i] * a[i] + q * w_hat[i]) / (a_diag[i] + q);
  }
  return v;
}

}  // namespace cflsim
