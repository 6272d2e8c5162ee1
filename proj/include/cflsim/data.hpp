#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cflsim/errors.hpp"
#include "cflsim/nn.hpp"
#include "cflsim/rng.hpp"

// Synthetic class-incremental / domain-incremental task streams over
// Gaussian class clusters, plus the Dirichlet client partitioner.

namespace cflsim {

enum class TaskKind { ClassIl, DomainIl };

struct DomainShift {
  double rotation_angle_per_task = 0.0;  // radians, applied on axes (0, 1)
  double bias_shift_per_task = 0.0;      // added to every feature
};

struct SyntheticSpec {
  int feature_dim = 2;
  int total_classes = 2;
  int n_tasks = 1;
  int samples_per_class_train = 100;
  int samples_per_class_test = 50;
  double cluster_spread = 1.0;
  DomainShift domain_shift;
};

inline void validate_spec(const SyntheticSpec& spec, TaskKind kind) {
  if (spec.feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (spec.total_classes < 1) throw ConfigError("total_classes must be >= 1");
  if (spec.n_tasks < 1) throw ConfigError("n_tasks must be >= 1");
  if (spec.samples_per_class_train < 1) throw ConfigError("samples_per_class_train must be >= 1");
  if (spec.samples_per_class_test < 1) throw ConfigError("samples_per_class_test must be >= 1");
  if (!(spec.cluster_spread > 0.0)) throw ConfigError("cluster_spread must be positive");
  if (kind == TaskKind::ClassIl && spec.total_classes % spec.n_tasks != 0) {
    throw ConfigError("total_classes (" + std::to_string(spec.total_classes) +
                      ") not divisible by n_tasks (" + std::to_string(spec.n_tasks) + ")");
  }
  if (kind == TaskKind::DomainIl && spec.feature_dim < 2) {
    throw ConfigError("domain-incremental streams need feature_dim >= 2");
  }
}

struct Task {
  int task_id = 0;
  Batch train;
  Batch test;
  std::vector<int> classes_present;
  TaskKind kind = TaskKind::ClassIl;
};

struct TaskStream {
  std::vector<Task> tasks;
  int total_classes = 0;
  int feature_dim = 0;
  TaskKind kind = TaskKind::ClassIl;

  int n_tasks() const { return static_cast<int>(tasks.size()); }
};

/// Per-class cluster means, drawn once on a sphere of radius 3 * spread.
inline std::vector<std::vector<double>> class_means(const SyntheticSpec& spec,
                                                    std::uint64_t seed) {
  const double radius = 3.0 * spec.cluster_spread;
  std::vector<std::vector<double>> means(static_cast<std::size_t>(spec.total_classes));
  auto rng = RngStream::derive(seed, stream_tag::kClassMeans);
  for (auto& mean : means) {
    mean.resize(static_cast<std::size_t>(spec.feature_dim));
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& x : mean) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (auto& x : mean) x *= radius / norm;
  }
  return means;
}

namespace detail {

// Samples for (task, class) come from their own derived stream, so the
// same (seed, task, class) triple yields identical points in both stream
// kinds regardless of which classes a task holds.
inline void append_class_samples(Batch& batch, const std::vector<double>& mean, int class_id,
                                 int count, double spread, std::uint64_t seed, int task_id,
                                 bool test_split) {
  auto rng = RngStream::derive(seed, stream_tag::kTaskSamples,
                               (static_cast<std::uint64_t>(task_id) << 1) |
                                   (test_split ? 1u : 0u),
                               static_cast<std::uint64_t>(class_id));
  const std::size_t dim = mean.size();
  for (int s = 0; s < count; ++s) {
    for (std::size_t d = 0; d < dim; ++d) {
      batch.inputs.data.push_back(mean[d] + spread * rng.normal());
    }
    batch.labels.push_back(class_id);
    batch.inputs.rows += 1;
  }
}

inline void rotate_and_shift(Batch& batch, double angle, double bias) {
  if (angle == 0.0 && bias == 0.0) return;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const std::size_t dim = batch.inputs.cols;
  for (std::size_t r = 0; r < batch.inputs.rows; ++r) {
    double* row = batch.inputs.data.data() + r * dim;
    if (dim >= 2 && angle != 0.0) {
      const double x0 = row[0];
      const double x1 = row[1];
      row[0] = c * x0 - s * x1;
      row[1] = s * x0 + c * x1;
    }
    for (std::size_t d = 0; d < dim; ++d) row[d] += bias;
  }
}

}  // namespace detail

/// Class-incremental stream: task t holds classes [t*|Y|/n, (t+1)*|Y|/n).
inline TaskStream gen_class_il_stream(const SyntheticSpec& spec, std::uint64_t seed) {
  validate_spec(spec, TaskKind::ClassIl);
  const auto means = class_means(spec, seed);
  const int classes_per_task = spec.total_classes / spec.n_tasks;

  TaskStream stream;
  stream.total_classes = spec.total_classes;
  stream.feature_dim = spec.feature_dim;
  stream.kind = TaskKind::ClassIl;
  for (int t = 0; t < spec.n_tasks; ++t) {
    Task task;
    task.task_id = t;
    task.kind = TaskKind::ClassIl;
    task.train.inputs.cols = static_cast<std::size_t>(spec.feature_dim);
    task.test.inputs.cols = static_cast<std::size_t>(spec.feature_dim);
    for (int c = t * classes_per_task; c < (t + 1) * classes_per_task; ++c) {
      task.classes_present.push_back(c);
      detail::append_class_samples(task.train, means[static_cast<std::size_t>(c)], c,
                                   spec.samples_per_class_train, spec.cluster_spread, seed, t,
                                   false);
      detail::append_class_samples(task.test, means[static_cast<std::size_t>(c)], c,
                                   spec.samples_per_class_test, spec.cluster_spread, seed, t,
                                   true);
    }
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

/// Domain-incremental stream: every task holds all classes; task t rotates
/// the base clusters by t * rotation_angle on the first two axes and adds
/// a uniform feature offset of t * bias_shift.
inline TaskStream gen_domain_il_stream(const SyntheticSpec& spec, std::uint64_t seed) {
  validate_spec(spec, TaskKind::DomainIl);
  const auto means = class_means(spec, seed);

  TaskStream stream;
  stream.total_classes = spec.total_classes;
  stream.feature_dim = spec.feature_dim;
  stream.kind = TaskKind::DomainIl;
  for (int t = 0; t < spec.n_tasks; ++t) {
    Task task;
    task.task_id = t;
    task.kind = TaskKind::DomainIl;
    task.train.inputs.cols = static_cast<std::size_t>(spec.feature_dim);
    task.test.inputs.cols = static_cast<std::size_t>(spec.feature_dim);
    for (int c = 0; c < spec.total_classes; ++c) {
      task.classes_present.push_back(c);
      detail::append_class_samples(task.train, means[static_cast<std::size_t>(c)], c,
                                   spec.samples_per_class_train, spec.cluster_spread, seed, t,
                                   false);
      detail::append_class_samples(task.test, means[static_cast<std::size_t>(c)], c,
                                   spec.samples_per_class_test, spec.cluster_spread, seed, t,
                                   true);
    }
    const double angle = static_cast<double>(t) * spec.domain_shift.rotation_angle_per_task;
    const double bias = static_cast<double>(t) * spec.domain_shift.bias_shift_per_task;
    detail::rotate_and_shift(task.train, angle, bias);
    detail::rotate_and_shift(task.test, angle, bias);
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

struct Partition {
  std::vector<std::vector<std::size_t>> assignments;  // per client, indices into task.train

  int n_clients() const { return static_cast<int>(assignments.size()); }
};

/// Per class c: draw p_c ~ Dir(alpha_dir * 1_K) and assign that class's
/// samples to clients multinomially by p_c. The whole partition is redrawn
/// (bounded retries) whenever some client ends up empty.
inline Partition dirichlet_partition(const Task& task, int n_clients, double alpha_dir,
                                     std::uint64_t seed, int max_retries = 100) {
  if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
  if (!(alpha_dir > 0.0)) throw ConfigError("alpha_dir must be positive");
  if (task.train.size() == 0) throw DataError("cannot partition an empty training set");

  // class -> row indices, classes in ascending order
  std::vector<int> classes = task.classes_present;
  std::sort(classes.begin(), classes.end());
  std::vector<std::vector<std::size_t>> rows_by_class(classes.size());
  for (std::size_t r = 0; r < task.train.size(); ++r) {
    const int y = task.train.labels[r];
    const auto it = std::lower_bound(classes.begin(), classes.end(), y);
    if (it == classes.end() || *it != y) {
      throw DataError("training row labelled " + std::to_string(y) +
                      " which is not in classes_present");
    }
    rows_by_class[static_cast<std::size_t>(it - classes.begin())].push_back(r);
  }

  const std::size_t k = static_cast<std::size_t>(n_clients);
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    auto rng = RngStream::derive(seed, stream_tag::kPartition,
                                 static_cast<std::uint64_t>(task.task_id),
                                 static_cast<std::uint64_t>(attempt));
    Partition partition;
    partition.assignments.assign(k, {});
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
      const auto shares = rng.dirichlet(alpha_dir, k);
      for (const std::size_t row : rows_by_class[ci]) {
        partition.assignments[rng.categorical(shares)].push_back(row);
      }
    }
    const bool any_empty = std::any_of(partition.assignments.begin(), partition.assignments.end(),
                                       [](const auto& a) { return a.empty(); });
    if (!any_empty) return partition;
  }

  std::ostringstream msg;
  msg << "no non-empty partition after " << max_retries << " retries (alpha_dir=" << alpha_dir
      << ", n_clients=" << n_clients << ", train_size=" << task.train.size() << ")";
  throw PartitionError(msg.str());
}

/// CSV with header `f0,...,f{d-1},label`; every row is d floats + an
/// integer class label.
inline Batch load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  if (header.size() < 2 || header.back() != "label") {
    throw DataError(path + ": header must be f0,...,f{d-1},label");
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t i = 0; i < dim; ++i) {
    if (header[i] != "f" + std::to_string(i)) {
      throw DataError(path + ": unexpected header column '" + header[i] + "' at position " +
                      std::to_string(i));
    }
  }

  Batch batch;
  batch.inputs.cols = dim;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> values;
    while (std::getline(ss, field, ',')) {
      try {
        values.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric field '" + field +
                        "'");
      }
    }
    if (values.size() != dim + 1) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(dim + 1) + " fields, got " + std::to_string(values.size()));
    }
    const double label_raw = values.back();
    const int label = static_cast<int>(std::llround(label_raw));
    if (label < 0 || std::abs(label_raw - label) > 1e-9) {
      throw DataError(path + ":" + std::to_string(line_no) + ": label must be a non-negative integer");
    }
    batch.inputs.data.insert(batch.inputs.data.end(), values.begin(), values.end() - 1);
    batch.inputs.rows += 1;
    batch.labels.push_back(label);
  }
  if (batch.size() == 0) throw DataError(path + ": no data rows");
  return batch;
}

/// Slice loaded train/test batches into a class-incremental stream, for
/// plugging real datasets in without code changes.
inline TaskStream class_il_stream_from_batches(const Batch& train, const Batch& test,
                                               int n_tasks) {
  if (train.inputs.cols != test.inputs.cols) {
    throw DataError("train/test feature widths differ");
  }
  int max_label = -1;
  for (const int y : train.labels) max_label = std::max(max_label, y);
  for (const int y : test.labels) max_label = std::max(max_label, y);
  const int total_classes = max_label + 1;
  if (total_classes < 1) throw DataError("no labels found");
  if (n_tasks < 1 || total_classes % n_tasks != 0) {
    throw ConfigError("total_classes (" + std::to_string(total_classes) +
                      ") not divisible by n_tasks (" + std::to_string(n_tasks) + ")");
  }
  const int per_task = total_classes / n_tasks;

  TaskStream stream;
  stream.total_classes = total_classes;
  stream.feature_dim = static_cast<int>(train.inputs.cols);
  stream.kind = TaskKind::ClassIl;
  for (int t = 0; t < n_tasks; ++t) {
    Task task;
    task.task_id = t;
    task.kind = TaskKind::ClassIl;
    task.train.inputs.cols = train.inputs.cols;
    task.test.inputs.cols = test.inputs.cols;
    for (int c = t * per_task; c < (t + 1) * per_task; ++c) task.classes_present.push_back(c);
    const auto in_task = [&](int y) { return y >= t * per_task && y < (t + 1) * per_task; };
    for (std::size_t r = 0; r < train.size(); ++r) {
      if (!in_task(train.labels[r])) continue;
      const double* row = train.inputs.data.data() + r * train.inputs.cols;
      task.train.inputs.data.insert(task.train.inputs.data.end(), row, row + train.inputs.cols);
      task.train.inputs.rows += 1;
      task.train.labels.push_back(train.labels[r]);
    }
    for (std::size_t r = 0; r < test.size(); ++r) {
      if (!in_task(test.labels[r])) continue;
      const double* row = test.inputs.data.data() + r * test.inputs.cols;
      task.test.inputs.data.insert(task.test.inputs.data.end(), row, row + test.inputs.cols);
      task.test.inputs.rows += 1;
      task.test.labels.push_back(test.labels[r]);
    }
    if (task.train.size() == 0 || task.test.size() == 0) {
      throw DataError("task " + std::to_string(t) + " has no train or test rows");
    }
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

}  // namespace cflsim
