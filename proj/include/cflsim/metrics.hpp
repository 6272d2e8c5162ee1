#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "cflsim/errors.hpp"
#include "cflsim/nn.hpp"

namespace cflsim {

/// Lower-triangular accuracy matrix: rows[i][j] is the global model's
/// accuracy on task j's test set right after finishing task i (j <= i).
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;

  int n() const { return static_cast<int>(rows.size()); }

  void validate() const {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != i + 1) {
        throw ShapeError("accuracy matrix row " + std::to_string(i) + " has " +
                         std::to_string(rows[i].size()) + " entries, expected " +
                         std::to_string(i + 1));
      }
      for (const double a : rows[i]) {
        if (a < 0.0 || a > 1.0) throw NumericError("accuracy outside [0,1]");
      }
    }
  }
};

/// Top-1 accuracy of the model on each test batch, argmax over the whole
/// shared head.
inline std::vector<double> eval_global(const MlpModel& model, const std::vector<Batch>& tests) {
  if (tests.empty()) throw DataError("eval_global needs at least one test set");
  std::vector<double> accs;
  accs.reserve(tests.size());
  for (const auto& test : tests) {
    if (test.size() == 0) throw DataError("empty test set");
    validate_batch(test, model.output_dim());
    const Matrix logits = forward(model, test.inputs);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
      const double* row = logits.data.data() + r * logits.cols;
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.cols; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (static_cast<int>(best) == test.labels[r]) ++correct;
    }
    accs.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
  }
  return accs;
}

/// Mean of the last row: accuracy over all tasks after the final one.
inline double final_accuracy(const AccuracyMatrix& m) {
  if (m.rows.empty()) throw DataError("empty accuracy matrix");
  m.validate();
  const auto& last = m.rows.back();
  double total = 0.0;
  for (const double a : last) total += a;
  return total / static_cast<double>(last.size());
}

/// Mean over boundaries of the per-boundary prefix mean; reduces to
/// final_accuracy when there is a single task.
inline double average_accuracy(const AccuracyMatrix& m) {
  if (m.rows.empty()) throw DataError("empty accuracy matrix");
  m.validate();
  double total = 0.0;
  for (const auto& row : m.rows) {
    double row_sum = 0.0;
    for (const double a : row) row_sum += a;
    total += row_sum / static_cast<double>(row.size());
  }
  return total / static_cast<double>(m.rows.size());
}

/// Mean over non-final tasks of (best accuracy ever seen on the task minus
/// its final accuracy). Non-negative by construction.
inline double forgetting(const AccuracyMatrix& m) {
  m.validate();
  const int n = m.n();
  if (n < 2) throw DataError("forgetting needs at least two tasks");
  double total = 0.0;
  for (int j = 0; j + 1 < n; ++j) {
    double best = 0.0;
    for (int i = j; i < n; ++i) best = std::max(best, m.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    total += best - m.rows[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(j)];
  }
  return total / static_cast<double>(n - 1);
}

/// One experiment's results; everything needed to rebuild the summary
/// tables without re-running.
struct MetricsRecord {
  AccuracyMatrix matrix;
  double final_acc = 0.0;
  double avg_acc = 0.0;
  double forgetting = 0.0;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::int64_t wall_ms = 0;

  // echo of the run coordinates, for grouping in reports
  std::string algo;
  double alpha_dir = 0.0;
  double lambda = 0.0;            // 0 when the algorithm has no lambda
  std::vector<int> rounds_to_best;  // per task; empty unless per-round eval ran
};

}  // namespace cflsim
