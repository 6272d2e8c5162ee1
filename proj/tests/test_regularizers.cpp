#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cflsim/nn.hpp"
#include "cflsim/regularizers.hpp"
#include "cflsim/rng.hpp"

using namespace cflsim;

namespace {

LayoutPtr scalar_layout() { return make_layout({{"w", 1, 1}}); }

ParamVector scalar(double v) { return ParamVector(scalar_layout(), {v}); }

Batch random_batch(std::size_t rows, std::size_t cols, int classes, std::uint64_t seed) {
  Batch batch;
  batch.inputs = Matrix(rows, cols);
  RngStream rng(seed);
  for (auto& v : batch.inputs.data) v = rng.normal();
  for (std::size_t r = 0; r < rows; ++r) {
    batch.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  }
  return batch;
}

}  // namespace

TEST(SiAccumulate, ZeroGradLeavesContributions) {
  SiState state = make_si_state(scalar(1.0), 1e-3, 1.0);
  si_accumulate(state, scalar(0.0), scalar(-0.3));
  EXPECT_EQ(state.s[0], 0.0);
}

TEST(SiAccumulate, ScalarArithmetic) {
  SiState state = make_si_state(scalar(1.0), 1e-3, 1.0);
  si_accumulate(state, scalar(2.0), scalar(-0.2));
  EXPECT_DOUBLE_EQ(state.s[0], 0.4);  // -g*delta = -2*(-0.2)
}

TEST(SiAccumulate, MatchesScalarTrajectoryOracle) {
  // descend L = 1/2 (w-1)^2 from w=0 with lr 0.1 for 50 steps; the
  // reference accumulator is an independent plain-double simulation
  const double lr = 0.1;
  SiState state = make_si_state(scalar(0.0), 0.1, 1.0);
  ParamVector w = scalar(0.0);
  double w_ref = 0.0, s_ref = 0.0;
  for (int step = 0; step < 50; ++step) {
    const double g_ref = w_ref - 1.0;
    s_ref += lr * g_ref * g_ref;
    w_ref -= lr * g_ref;

    const ParamVector g = scalar(w[0] - 1.0);
    const StepResult r = sgd_step(w, g, lr);
    si_accumulate(state, g, r.delta);
    w = r.params;
  }
  EXPECT_NEAR(state.s[0], s_ref, 1e-12);
  EXPECT_NEAR(w[0], w_ref, 1e-12);

  // consolidation applies the importance formula exactly
  const double expected_omega = std::max(0.0, state.s[0]) / ((w[0] - 0.0) * (w[0] - 0.0) + 0.1);
  si_consolidate(state, w);
  EXPECT_DOUBLE_EQ(state.omega[0], expected_omega);
  EXPECT_EQ(state.s[0], 0.0);
}

TEST(SiAccumulate, ApproachesExactPathIntegralForSmallSteps) {
  // exact integral of (w-1) dw over [0,1) is 1/2; the Riemann sum
  // converges to it as the step size shrinks
  const double lr = 0.001;
  SiState state = make_si_state(scalar(0.0), 1e-3, 1.0);
  ParamVector w = scalar(0.0);
  for (int step = 0; step < 20000; ++step) {
    const ParamVector g = scalar(w[0] - 1.0);
    const StepResult r = sgd_step(w, g, lr);
    si_accumulate(state, g, r.delta);
    w = r.params;
  }
  EXPECT_NEAR(state.s[0], 0.5, 1e-3);
}

TEST(SiAccumulate, RejectsLayoutMismatch) {
  SiState state = make_si_state(scalar(0.0), 1e-3, 1.0);
  const ParamVector other(make_layout({{"w", 2, 1}}));
  EXPECT_THROW(si_accumulate(state, other, other), ShapeError);
}

TEST(SiConsolidate, ZeroContributionLeavesOmega) {
  SiState state = make_si_state(scalar(0.0), 0.1, 1.0);
  si_consolidate(state, scalar(2.0));
  EXPECT_EQ(state.omega[0], 0.0);
  EXPECT_EQ(state.anchor[0], 2.0);
  EXPECT_EQ(state.trajectory_start[0], 2.0);
}

TEST(SiConsolidate, ScalarArithmetic) {
  SiState state = make_si_state(scalar(0.0), 0.1, 1.0);
  state.s[0] = 0.5;
  si_consolidate(state, scalar(1.0));
  EXPECT_NEAR(state.omega[0], 0.5 / 1.1, 1e-15);
}

TEST(SiConsolidate, EpsDominatesUnmovedParameters) {
  SiState state = make_si_state(scalar(0.7), 1e-3, 1.0);
  state.s[0] = 0.2;
  si_consolidate(state, scalar(0.7));  // no displacement
  EXPECT_DOUBLE_EQ(state.omega[0], 0.2 / 1e-3);
}

TEST(SiConsolidate, NegativeContributionsClampedToZero) {
  SiState state = make_si_state(scalar(0.0), 0.1, 1.0);
  state.s[0] = -3.0;
  si_consolidate(state, scalar(1.0));
  EXPECT_EQ(state.omega[0], 0.0);
}

TEST(SiConsolidate, OmegaNonDecreasingAcrossBoundaries) {
  const MlpModel m = init_model({3, 4, 2}, 6);
  SiState state = make_si_state(m.params, 1e-3, 1.0);
  ParamVector w = m.params;
  RngStream rng(606);
  MlpModel scratch = m;
  for (int boundary = 0; boundary < 4; ++boundary) {
    const ParamVector before = state.omega;
    for (int step = 0; step < 10; ++step) {
      const Batch batch = random_batch(6, 3, 2, rng.next_u64());
      scratch.params = w;
      const ParamVector g = backward(scratch, batch);
      const StepResult r = sgd_step(w, g, 0.1);
      si_accumulate(state, g, r.delta);
      w = r.params;
    }
    si_consolidate(state, w);
    for (std::size_t i = 0; i < state.omega.size(); ++i) {
      EXPECT_GE(state.omega[i], before[i]);
    }
  }
}

TEST(SiAccumulate, PureSgdIncrementsAreNonNegative) {
  const MlpModel m = init_model({4, 5, 3}, 10);
  ParamVector w = m.params;
  MlpModel scratch = m;
  RngStream rng(11);
  for (int step = 0; step < 30; ++step) {
    SiState probe = make_si_state(w, 1e-3, 1.0);
    const Batch batch = random_batch(5, 4, 3, rng.next_u64());
    scratch.params = w;
    const ParamVector g = backward(scratch, batch);
    const StepResult r = sgd_step(w, g, 0.05);
    si_accumulate(probe, g, r.delta);
    for (std::size_t i = 0; i < probe.s.size(); ++i) {
      EXPECT_GE(probe.s[i], 0.0);
    }
    w = r.params;
  }
}

TEST(SiPenalty, ZeroAtAnchor) {
  SiState state = make_si_state(scalar(0.5), 1e-3, 2.0);
  state.omega[0] = 3.0;
  const Penalty p = si_penalty(state, scalar(0.5));
  EXPECT_EQ(p.loss, 0.0);
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(SiPenalty, ScalarArithmetic) {
  SiState state = make_si_state(scalar(0.0), 1e-3, 1.0);
  state.omega[0] = 2.0;
  const Penalty p = si_penalty(state, scalar(0.5));
  EXPECT_DOUBLE_EQ(p.loss, 0.5);  // 1 * 2 * 0.25
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0);
}

TEST(SiPenalty, GradientMatchesFiniteDifferences) {
  const MlpModel m = init_model({3, 4, 2}, 77);
  SiState state = make_si_state(m.params, 1e-3, 0.7);
  RngStream rng(78);
  for (auto& o : state.omega.values()) o = rng.uniform(0.0, 3.0);
  for (auto& a : state.anchor.values()) a = rng.normal();
  ParamVector w = m.params;
  for (auto& v : w.values()) v += rng.normal();

  const Penalty p = si_penalty(state, w);
  const double h = 1e-6;
  for (std::size_t i = 0; i < w.size(); ++i) {
    ParamVector up = w, down = w;
    up[i] += h;
    down[i] -= h;
    const double fd = (si_penalty(state, up).loss - si_penalty(state, down).loss) / (2.0 * h);
    EXPECT_LE(std::abs(fd - p.grad[i]) / std::max({std::abs(fd), std::abs(p.grad[i]), 1e-3}),
              1e-6);
  }
}

TEST(SiPenalty, ScalesLinearlyWithStrength) {
  const MlpModel m = init_model({2, 3, 2}, 5);
  SiState a = make_si_state(m.params, 1e-3, 0.8);
  RngStream rng(51);
  for (auto& o : a.omega.values()) o = rng.uniform(0.0, 2.0);
  SiState b = a;
  b.reg_strength = 1.6;
  ParamVector w = m.params;
  for (auto& v : w.values()) v += rng.normal();
  const Penalty pa = si_penalty(a, w);
  const Penalty pb = si_penalty(b, w);
  EXPECT_DOUBLE_EQ(pb.loss, 2.0 * pa.loss);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_DOUBLE_EQ(pb.grad[i], 2.0 * pa.grad[i]);
}

TEST(EwcFisher, HandComputedLogisticOracle) {
  // linear two-class model on scalar inputs; per-example gradients have a
  // closed form: dz_c = softmax_c - 1{c=y}, dW_c = dz_c * x, db_c = dz_c
  MlpModel m = init_model({1, 2}, 1);
  m.params.values() = {0.8, -0.4, 0.1, -0.1};  // W(1x2), b(2)
  Batch data;
  data.inputs = Matrix(2, 1);
  data.inputs.at(0, 0) = 1.5;
  data.inputs.at(1, 0) = -0.7;
  data.labels = {0, 1};

  std::vector<double> expected(4, 0.0);
  for (int ex = 0; ex < 2; ++ex) {
    const double x = data.inputs.at(ex, 0);
    const double z0 = 0.8 * x + 0.1;
    const double z1 = -0.4 * x - 0.1;
    const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
    const double p1 = 1.0 - p0;
    const double d0 = p0 - (data.labels[ex] == 0 ? 1.0 : 0.0);
    const double d1 = p1 - (data.labels[ex] == 1 ? 1.0 : 0.0);
    const double g[4] = {d0 * x, d1 * x, d0, d1};
    for (int i = 0; i < 4; ++i) expected[i] += g[i] * g[i] / 2.0;
  }

  const EwcState state = ewc_estimate_fisher(m, data, 2, 9);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(state.fisher[i], expected[i], 1e-10);
  EXPECT_EQ(state.anchor.values(), m.params.values());
}

TEST(EwcFisher, SaturatedModelHasVanishingFisher) {
  MlpModel m = init_model({1, 2}, 1);
  m.params.values() = {50.0, -50.0, 0.0, 0.0};
  Batch data;
  data.inputs = Matrix(2, 1);
  data.inputs.at(0, 0) = 1.0;
  data.inputs.at(1, 0) = 2.0;
  data.labels = {0, 0};
  const EwcState state = ewc_estimate_fisher(m, data, 2, 9);
  for (std::size_t i = 0; i < state.fisher.size(); ++i) EXPECT_LE(state.fisher[i], 1e-12);
}

TEST(EwcFisher, AlwaysNonNegativeAndSubsampled) {
  const MlpModel m = init_model({3, 4, 2}, 123);
  const Batch data = random_batch(20, 3, 2, 321);
  const EwcState full = ewc_estimate_fisher(m, data, 100, 9);
  const EwcState sub = ewc_estimate_fisher(m, data, 5, 9);
  for (std::size_t i = 0; i < full.fisher.size(); ++i) {
    EXPECT_GE(full.fisher[i], 0.0);
    EXPECT_GE(sub.fisher[i], 0.0);
  }
  EXPECT_THROW(ewc_estimate_fisher(m, data, 0, 9), ConfigError);
  Batch empty;
  empty.inputs.cols = 3;
  EXPECT_THROW(ewc_estimate_fisher(m, empty, 1, 9), DataError);
}

TEST(EwcPenalty, MirrorsSiPenaltyContract) {
  EwcState state;
  state.fisher = scalar(2.0);
  state.anchor = scalar(0.0);
  state.reg_strength = 1.0;
  const Penalty zero = ewc_penalty(state, scalar(0.0));
  EXPECT_EQ(zero.loss, 0.0);
  EXPECT_EQ(zero.grad[0], 0.0);
  const Penalty p = ewc_penalty(state, scalar(0.5));
  EXPECT_DOUBLE_EQ(p.loss, 0.5);
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0);
}

TEST(EwcPenalty, GradientMatchesFiniteDifferences) {
  const MlpModel m = init_model({2, 3, 2}, 88);
  EwcState state;
  state.fisher = zeros_like(m.params);
  state.anchor = m.params;
  state.reg_strength = 1.3;
  RngStream rng(89);
  for (auto& f : state.fisher.values()) f = rng.uniform(0.0, 2.0);
  ParamVector w = m.params;
  for (auto& v : w.values()) v += rng.normal();

  const Penalty p = ewc_penalty(state, w);
  const double h = 1e-6;
  for (std::size_t i = 0; i < w.size(); ++i) {
    ParamVector up = w, down = w;
    up[i] += h;
    down[i] -= h;
    const double fd = (ewc_penalty(state, up).loss - ewc_penalty(state, down).loss) / (2.0 * h);
    EXPECT_LE(std::abs(fd - p.grad[i]) / std::max({std::abs(fd), std::abs(p.grad[i]), 1e-3}),
              1e-6);
  }
}

TEST(ProxPenalty, Trivials) {
  const Penalty off = prox_penalty(scalar(1.0), scalar(3.0), 0.0);
  EXPECT_EQ(off.loss, 0.0);
  EXPECT_EQ(off.grad[0], 0.0);
  const Penalty at = prox_penalty(scalar(2.0), scalar(2.0), 5.0);
  EXPECT_EQ(at.loss, 0.0);
  EXPECT_EQ(at.grad[0], 0.0);
}

TEST(ProxPenalty, TwoDimensionalArithmetic) {
  auto layout = make_layout({{"w", 2, 1}});
  const ParamVector w(layout, {1.0, -1.0});
  const ParamVector g(layout, {0.0, 0.0});
  const Penalty p = prox_penalty(w, g, 2.0);
  EXPECT_DOUBLE_EQ(p.loss, 2.0);  // (2/2) * (1 + 1)
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(p.grad[1], -2.0);
}
