#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cflsim/errors.hpp"
#include "cflsim/param_vector.hpp"
#include "cflsim/rng.hpp"

// Minimal dense network with exact analytic gradients. Everything is plain
// double loops over row-major buffers; model sizes in this simulator are a
// few thousand parameters, so clarity wins over BLAS.

namespace cflsim {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct Batch {
  Matrix inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.rows; }
};

inline void validate_batch(const Batch& batch, int num_classes) {
  if (batch.inputs.rows != batch.labels.size()) {
    throw DataError("batch has " + std::to_string(batch.inputs.rows) + " rows but " +
                    std::to_string(batch.labels.size()) + " labels");
  }
  for (const int y : batch.labels) {
    if (y < 0 || y >= num_classes) {
      throw DataError("label " + std::to_string(y) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

enum class Activation { Relu };

struct MlpModel {
  std::vector<int> layer_dims;
  Activation activation = Activation::Relu;
  ParamVector params;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return layer_dims.size() - 1; }

  // segment order: W0, b0, W1, b1, ...
  std::span<const double> weight(std::size_t layer) const { return params.segment(2 * layer); }
  std::span<const double> bias(std::size_t layer) const { return params.segment(2 * layer + 1); }
  std::span<double> weight(std::size_t layer) { return params.segment(2 * layer); }
  std::span<double> bias(std::size_t layer) { return params.segment(2 * layer + 1); }
};

inline LayoutPtr mlp_layout(const std::vector<int>& layer_dims) {
  std::vector<ParamSegment> segments;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    segments.push_back({"W" + std::to_string(l), static_cast<std::size_t>(layer_dims[l]),
                        static_cast<std::size_t>(layer_dims[l + 1])});
    segments.push_back({"b" + std::to_string(l), static_cast<std::size_t>(layer_dims[l + 1]), 1});
  }
  return make_layout(std::move(segments));
}

/// Weights uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline MlpModel init_model(const std::vector<int>& layer_dims, std::uint64_t seed) {
  if (layer_dims.size() < 2) {
    throw ConfigError("layer_dims needs at least input and output sizes");
  }
  for (const int d : layer_dims) {
    if (d < 1) throw ConfigError("layer_dims entries must be >= 1");
  }
  MlpModel model;
  model.layer_dims = layer_dims;
  model.params = ParamVector(mlp_layout(layer_dims));
  auto rng = RngStream::derive(seed, stream_tag::kModelInit);
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer_dims[l]));
    for (double& w : model.weight(l)) w = rng.uniform(-bound, bound);
  }
  return model;
}

namespace detail {

// activations per layer; zs[l] holds pre-activations of layer l
struct ForwardTrace {
  std::vector<Matrix> zs;
  std::vector<Matrix> activations;  // activations[0] = inputs
};

inline ForwardTrace forward_trace(const MlpModel& model, const Matrix& inputs) {
  if (inputs.cols != static_cast<std::size_t>(model.input_dim())) {
    throw ShapeError("input width " + std::to_string(inputs.cols) + " != model input dim " +
                     std::to_string(model.input_dim()));
  }
  ForwardTrace trace;
  trace.activations.push_back(inputs);
  const std::size_t layers = model.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& prev = trace.activations.back();
    const std::size_t in_dim = static_cast<std::size_t>(model.layer_dims[l]);
    const std::size_t out_dim = static_cast<std::size_t>(model.layer_dims[l + 1]);
    const auto w = model.weight(l);
    const auto b = model.bias(l);
    Matrix z(prev.rows, out_dim);
    for (std::size_t r = 0; r < prev.rows; ++r) {
      const double* in_row = prev.data.data() + r * in_dim;
      double* z_row = z.data.data() + r * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) z_row[j] = b[j];
      for (std::size_t i = 0; i < in_dim; ++i) {
        const double x = in_row[i];
        const double* w_row = w.data() + i * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) z_row[j] += x * w_row[j];
      }
    }
    if (l + 1 < layers) {
      Matrix a = z;
      for (double& v : a.data) v = std::max(0.0, v);
      trace.zs.push_back(std::move(z));
      trace.activations.push_back(std::move(a));
    } else {
      trace.zs.push_back(z);
      trace.activations.push_back(std::move(z));  // logits, no activation
    }
  }
  return trace;
}

}  // namespace detail

/// Logits for a batch of inputs; pure function of (params, inputs).
inline Matrix forward(const MlpModel& model, const Matrix& inputs) {
  auto trace = detail::forward_trace(model, inputs);
  Matrix logits = std::move(trace.activations.back());
  for (const double v : logits.data) {
    if (!std::isfinite(v)) throw NumericError("forward produced non-finite logits");
  }
  return logits;
}

/// Mean cross-entropy with log-sum-exp stabilization.
inline double ce_loss(const Matrix& logits, const std::vector<int>& labels) {
  if (logits.rows != labels.size()) {
    throw DataError("logit rows and label count differ");
  }
  if (logits.rows == 0) throw DataError("empty batch in ce_loss");
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const int y = labels[r];
    if (y < 0 || y >= static_cast<int>(logits.cols)) {
      throw DataError("label " + std::to_string(y) + " out of range");
    }
    const double* row = logits.data.data() + r * logits.cols;
    double m = row[0];
    for (std::size_t c = 1; c < logits.cols; ++c) m = std::max(m, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) sum += std::exp(row[c] - m);
    total += m + std::log(sum) - row[static_cast<std::size_t>(y)];
  }
  return total / static_cast<double>(logits.rows);
}

/// Exact gradient of ce_loss(forward(model, batch)) w.r.t. every parameter.
inline ParamVector backward(const MlpModel& model, const Batch& batch) {
  if (batch.size() == 0) throw DataError("backward on an empty batch");
  validate_batch(batch, model.output_dim());
  auto trace = detail::forward_trace(model, batch.inputs);

  const std::size_t n = batch.size();
  const std::size_t layers = model.num_layers();
  const std::size_t out_dim = static_cast<std::size_t>(model.output_dim());

  // d(mean CE)/d(logits) = (softmax - onehot) / n
  Matrix delta(n, out_dim);
  {
    const Matrix& logits = trace.activations.back();
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = logits.data.data() + r * out_dim;
      double* d_row = delta.data.data() + r * out_dim;
      double m = row[0];
      for (std::size_t c = 1; c < out_dim; ++c) m = std::max(m, row[c]);
      double sum = 0.0;
      for (std::size_t c = 0; c < out_dim; ++c) {
        d_row[c] = std::exp(row[c] - m);
        sum += d_row[c];
      }
      for (std::size_t c = 0; c < out_dim; ++c) d_row[c] /= sum;
      d_row[static_cast<std::size_t>(batch.labels[r])] -= 1.0;
      for (std::size_t c = 0; c < out_dim; ++c) d_row[c] /= static_cast<double>(n);
    }
  }

  ParamVector grad(model.params.layout());
  for (std::size_t li = layers; li-- > 0;) {
    const std::size_t in_dim = static_cast<std::size_t>(model.layer_dims[li]);
    const std::size_t od = static_cast<std::size_t>(model.layer_dims[li + 1]);
    const Matrix& a_prev = trace.activations[li];
    auto dw = grad.segment(2 * li);
    auto db = grad.segment(2 * li + 1);
    for (std::size_t r = 0; r < n; ++r) {
      const double* a_row = a_prev.data.data() + r * in_dim;
      const double* d_row = delta.data.data() + r * od;
      for (std::size_t j = 0; j < od; ++j) db[j] += d_row[j];
      for (std::size_t i = 0; i < in_dim; ++i) {
        const double a = a_row[i];
        if (a == 0.0) continue;
        double* dw_row = dw.data() + i * od;
        for (std::size_t j = 0; j < od; ++j) dw_row[j] += a * d_row[j];
      }
    }
    if (li == 0) break;
    // propagate: delta_prev = (delta . W^T) * relu'(z_prev)
    const auto w = model.weight(li);
    const Matrix& z_prev = trace.zs[li - 1];
    Matrix next(n, in_dim);
    for (std::size_t r = 0; r < n; ++r) {
      const double* d_row = delta.data.data() + r * od;
      const double* z_row = z_prev.data.data() + r * in_dim;
      double* n_row = next.data.data() + r * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) {
        if (z_row[i] <= 0.0) continue;  // relu'(z) = 0 for z <= 0
        const double* w_row = w.data() + i * od;
        double acc = 0.0;
        for (std::size_t j = 0; j < od; ++j) acc += d_row[j] * w_row[j];
        n_row[i] = acc;
      }
    }
    delta = std::move(next);
  }
  grad.check_finite("backward");
  return grad;
}

struct StepResult {
  ParamVector params;
  ParamVector delta;  // params_new - params_old, bitwise
};

/// One descent step; delta is returned so importance trackers can consume
/// the actual parameter motion. params_old + delta == params_new bitwise.
inline StepResult sgd_step(const ParamVector& params, const ParamVector& grad, double lr) {
  params.require_same_layout(grad, "sgd_step");
  if (lr < 0.0) throw ConfigError("learning rate must be non-negative");
  StepResult out{ParamVector(params.layout()), ParamVector(params.layout())};
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.delta[i] = -lr * grad[i];
    out.params[i] = params[i] + out.delta[i];
  }
  out.params.check_finite("sgd_step");
  return out;
}

struct AdamState {
  ParamVector m;
  ParamVector v;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(const LayoutPtr& layout) : m(layout), v(layout) {}
};

inline StepResult adam_step(const ParamVector& params, const ParamVector& grad, double lr,
                            AdamState& state) {
  params.require_same_layout(grad, "adam_step");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  StepResult out{ParamVector(params.layout()), ParamVector(params.layout())};
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    out.delta[i] = -lr * m_hat / (std::sqrt(v_hat) + state.eps);
    out.params[i] = params[i] + out.delta[i];
  }
  out.params.check_finite("adam_step");
  return out;
}

}  // namespace cflsim
