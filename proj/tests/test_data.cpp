#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <string>

#include "cflsim/data.hpp"

using namespace cflsim;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.feature_dim = 4;
  spec.total_classes = 10;
  spec.n_tasks = 5;
  spec.samples_per_class_train = 20;
  spec.samples_per_class_test = 10;
  spec.cluster_spread = 1.0;
  return spec;
}

Task labelled_task(const std::vector<int>& labels) {
  Task task;
  task.train.inputs.cols = 1;
  std::set<int> classes;
  for (const int y : labels) {
    task.train.inputs.data.push_back(0.0);
    task.train.inputs.rows += 1;
    task.train.labels.push_back(y);
    classes.insert(y);
  }
  task.classes_present.assign(classes.begin(), classes.end());
  return task;
}

void expect_partition_valid(const Partition& partition, std::size_t n_rows) {
  std::vector<int> seen(n_rows, 0);
  for (const auto& rows : partition.assignments) {
    EXPECT_FALSE(rows.empty());
    for (const std::size_t r : rows) {
      ASSERT_LT(r, n_rows);
      seen[r] += 1;
    }
  }
  for (const int count : seen) EXPECT_EQ(count, 1);
}

std::string write_temp_csv(const std::string& name, const std::string& content) {
  const std::string path = std::string(::testing::TempDir()) + name;
  std::ofstream out(path);
  out << content;
  return path;
}

}  // namespace

TEST(ClassIlStream, TaskClassMilestones) {
  const TaskStream stream = gen_class_il_stream(small_spec(), 3);
  ASSERT_EQ(stream.n_tasks(), 5);
  const std::vector<std::vector<int>> expected{{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
  for (int t = 0; t < 5; ++t) {
    EXPECT_EQ(stream.tasks[t].classes_present, expected[t]);
    EXPECT_EQ(stream.tasks[t].train.size(), 40u);  // 2 classes * 20
    EXPECT_EQ(stream.tasks[t].test.size(), 20u);
  }
}

TEST(ClassIlStream, SingleTaskHoldsEverything) {
  SyntheticSpec spec = small_spec();
  spec.n_tasks = 1;
  const TaskStream stream = gen_class_il_stream(spec, 3);
  ASSERT_EQ(stream.n_tasks(), 1);
  EXPECT_EQ(stream.tasks[0].classes_present.size(), 10u);
  EXPECT_EQ(stream.tasks[0].train.size(), 200u);
}

TEST(ClassIlStream, DeterministicInSeed) {
  const TaskStream a = gen_class_il_stream(small_spec(), 12);
  const TaskStream b = gen_class_il_stream(small_spec(), 12);
  const TaskStream c = gen_class_il_stream(small_spec(), 13);
  for (int t = 0; t < a.n_tasks(); ++t) {
    EXPECT_EQ(a.tasks[t].train.inputs.data, b.tasks[t].train.inputs.data);
    EXPECT_EQ(a.tasks[t].test.inputs.data, b.tasks[t].test.inputs.data);
    EXPECT_EQ(a.tasks[t].train.labels, b.tasks[t].train.labels);
  }
  EXPECT_NE(a.tasks[0].train.inputs.data, c.tasks[0].train.inputs.data);
}

TEST(ClassIlStream, RejectsIndivisibleClasses) {
  SyntheticSpec spec = small_spec();
  spec.n_tasks = 3;
  EXPECT_THROW(gen_class_il_stream(spec, 1), ConfigError);
}

TEST(ClassIlStream, LabelSetsDisjointAndComplete) {
  const TaskStream stream = gen_class_il_stream(small_spec(), 21);
  std::set<int> all;
  std::size_t total = 0;
  for (const auto& task : stream.tasks) {
    for (const int c : task.classes_present) all.insert(c);
    total += task.classes_present.size();
  }
  EXPECT_EQ(all.size(), total);  // pairwise disjoint
  EXPECT_EQ(all.size(), 10u);
}

TEST(ClassMeans, LieOnTheSphere) {
  const SyntheticSpec spec = small_spec();
  const auto means = class_means(spec, 5);
  ASSERT_EQ(means.size(), 10u);
  for (const auto& mean : means) {
    double norm = 0.0;
    for (const double x : mean) norm += x * x;
    EXPECT_NEAR(std::sqrt(norm), 3.0 * spec.cluster_spread, 1e-9);
  }
}

TEST(DomainIlStream, ConstantLabelSets) {
  SyntheticSpec spec = small_spec();
  spec.domain_shift.rotation_angle_per_task = 0.3;
  spec.domain_shift.bias_shift_per_task = 0.1;
  const TaskStream stream = gen_domain_il_stream(spec, 4);
  for (const auto& task : stream.tasks) {
    EXPECT_EQ(task.classes_present, stream.tasks[0].classes_present);
    EXPECT_EQ(task.classes_present.size(), 10u);
  }
}

TEST(DomainIlStream, Task0MatchesClassIlBaseClusters) {
  SyntheticSpec spec = small_spec();
  spec.domain_shift.rotation_angle_per_task = 0.7;
  const TaskStream domain = gen_domain_il_stream(spec, 9);

  SyntheticSpec base = spec;
  base.n_tasks = 1;
  const TaskStream class_il = gen_class_il_stream(base, 9);
  EXPECT_EQ(domain.tasks[0].train.inputs.data, class_il.tasks[0].train.inputs.data);
  EXPECT_EQ(domain.tasks[0].train.labels, class_il.tasks[0].train.labels);
  EXPECT_EQ(domain.tasks[0].test.inputs.data, class_il.tasks[0].test.inputs.data);
}

TEST(DomainIlStream, ZeroShiftKeepsDistribution) {
  SyntheticSpec spec = small_spec();
  spec.samples_per_class_train = 4000;
  spec.n_tasks = 3;
  const TaskStream stream = gen_domain_il_stream(spec, 31);
  const auto means = class_means(spec, 31);
  const double tol = 4.0 * spec.cluster_spread / std::sqrt(4000.0);
  for (const auto& task : stream.tasks) {
    std::vector<std::vector<double>> sums(10, std::vector<double>(4, 0.0));
    std::vector<int> counts(10, 0);
    for (std::size_t r = 0; r < task.train.size(); ++r) {
      const int y = task.train.labels[r];
      counts[y] += 1;
      for (std::size_t d = 0; d < 4; ++d) sums[y][d] += task.train.inputs.at(r, d);
    }
    for (int c = 0; c < 10; ++c) {
      for (std::size_t d = 0; d < 4; ++d) {
        EXPECT_NEAR(sums[c][d] / counts[c], means[c][d], tol);
      }
    }
  }
}

TEST(DomainIlStream, RotationByPiFlipsPlaneMeans) {
  SyntheticSpec spec;
  spec.feature_dim = 2;
  spec.total_classes = 3;
  spec.n_tasks = 2;
  spec.samples_per_class_train = 10000;
  spec.samples_per_class_test = 10;
  spec.cluster_spread = 1.0;
  spec.domain_shift.rotation_angle_per_task = 3.14159265358979323846;
  const TaskStream stream = gen_domain_il_stream(spec, 17);
  const auto means = class_means(spec, 17);
  const double tol = 3.0 * spec.cluster_spread / std::sqrt(10000.0) * 1.5;

  const auto& task1 = stream.tasks[1];
  std::vector<std::vector<double>> sums(3, std::vector<double>(2, 0.0));
  std::vector<int> counts(3, 0);
  for (std::size_t r = 0; r < task1.train.size(); ++r) {
    const int y = task1.train.labels[r];
    counts[y] += 1;
    sums[y][0] += task1.train.inputs.at(r, 0);
    sums[y][1] += task1.train.inputs.at(r, 1);
  }
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(sums[c][0] / counts[c], -means[c][0], tol);
    EXPECT_NEAR(sums[c][1] / counts[c], -means[c][1], tol);
  }
}

TEST(DomainIlStream, RejectsOneDimensionalFeatures) {
  SyntheticSpec spec = small_spec();
  spec.feature_dim = 1;
  EXPECT_THROW(gen_domain_il_stream(spec, 1), ConfigError);
}

TEST(DirichletPartition, SingleClientTakesEverything) {
  const Task task = labelled_task({0, 0, 1, 1, 2});
  const Partition p = dirichlet_partition(task, 1, 0.5, 7);
  ASSERT_EQ(p.n_clients(), 1);
  EXPECT_EQ(p.assignments[0].size(), 5u);
}

TEST(DirichletPartition, AlwaysAPartition) {
  RngStream meta(404);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> labels;
    const int n = 40 + static_cast<int>(meta.below(100));
    for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(meta.below(4)));
    const Task task = labelled_task(labels);
    const int clients = 1 + static_cast<int>(meta.below(5));
    const double alpha = meta.uniform(0.1, 10.0);
    const Partition p = dirichlet_partition(task, clients, alpha, meta.next_u64());
    expect_partition_valid(p, task.train.size());
  }
}

TEST(DirichletPartition, HighAlphaConcentratesNearUniform) {
  // alpha=1000, 10 clients, 10k samples/class: every client share of every
  // class should sit in [0.05, 0.15] at least 99% of (seed, class) cells
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c) {
    for (int i = 0; i < 10000; ++i) labels.push_back(c);
  }
  const Task task = labelled_task(labels);
  int cells = 0, hits = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Partition p = dirichlet_partition(task, 10, 1000.0, seed);
    std::vector<std::vector<int>> counts(10, std::vector<int>(10, 0));
    for (int k = 0; k < 10; ++k) {
      for (const std::size_t r : p.assignments[k]) counts[k][task.train.labels[r]] += 1;
    }
    for (int c = 0; c < 10; ++c) {
      ++cells;
      bool all_in = true;
      for (int k = 0; k < 10; ++k) {
        const double share = counts[k][c] / 10000.0;
        if (share < 0.05 || share > 0.15) all_in = false;
      }
      if (all_in) ++hits;
    }
  }
  EXPECT_GE(static_cast<double>(hits) / cells, 0.99);
}

TEST(DirichletPartition, LowerAlphaIsMoreHeterogeneous) {
  std::vector<int> labels;
  for (int c = 0; c < 5; ++c) {
    for (int i = 0; i < 400; ++i) labels.push_back(c);
  }
  const Task task = labelled_task(labels);
  const auto mean_max_share = [&](double alpha) {
    double total = 0.0;
    int draws = 0;
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
      const Partition p = dirichlet_partition(task, 8, alpha, seed);
      std::vector<std::vector<int>> counts(8, std::vector<int>(5, 0));
      for (int k = 0; k < 8; ++k) {
        for (const std::size_t r : p.assignments[k]) counts[k][task.train.labels[r]] += 1;
      }
      for (int c = 0; c < 5; ++c) {
        int best = 0;
        for (int k = 0; k < 8; ++k) best = std::max(best, counts[k][c]);
        total += best / 400.0;
        ++draws;
      }
    }
    return total / draws;
  };
  EXPECT_GT(mean_max_share(0.1), mean_max_share(100.0));
}

TEST(DirichletPartition, DeterministicInSeed) {
  const Task task = labelled_task({0, 0, 0, 1, 1, 1, 2, 2, 2});
  const Partition a = dirichlet_partition(task, 3, 0.5, 99);
  const Partition b = dirichlet_partition(task, 3, 0.5, 99);
  EXPECT_EQ(a.assignments, b.assignments);
}

TEST(DirichletPartition, ReportsExhaustedRetries) {
  const Task task = labelled_task({0, 1});  // 2 samples cannot cover 10 clients
  try {
    dirichlet_partition(task, 10, 1.0, 1);
    FAIL() << "expected PartitionError";
  } catch (const PartitionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("alpha_dir=1"), std::string::npos);
    EXPECT_NE(msg.find("n_clients=10"), std::string::npos);
  }
}

TEST(DirichletPartition, RejectsBadArguments) {
  const Task task = labelled_task({0, 1});
  EXPECT_THROW(dirichlet_partition(task, 0, 1.0, 1), ConfigError);
  EXPECT_THROW(dirichlet_partition(task, 2, 0.0, 1), ConfigError);
  EXPECT_THROW(dirichlet_partition(labelled_task({}), 2, 1.0, 1), DataError);
}

TEST(CsvLoader, RoundTripsAValidFile) {
  const std::string path = write_temp_csv(
      "ok.csv", "f0,f1,label\n0.5,-1.25,0\n1.5,2.5,1\n-0.5,0.25,1\n");
  const Batch batch = load_csv_dataset(path);
  EXPECT_EQ(batch.size(), 3u);
  EXPECT_EQ(batch.inputs.cols, 2u);
  EXPECT_DOUBLE_EQ(batch.inputs.at(0, 1), -1.25);
  EXPECT_EQ(batch.labels, (std::vector<int>{0, 1, 1}));
}

TEST(CsvLoader, RejectsBadHeaderWidthAndLabels) {
  EXPECT_THROW(load_csv_dataset(write_temp_csv("h.csv", "x0,x1,label\n1,2,0\n")), DataError);
  EXPECT_THROW(load_csv_dataset(write_temp_csv("w.csv", "f0,f1,label\n1,2\n")), DataError);
  EXPECT_THROW(load_csv_dataset(write_temp_csv("l.csv", "f0,f1,label\n1,2,0.5\n")), DataError);
  EXPECT_THROW(load_csv_dataset(write_temp_csv("n.csv", "f0,f1,label\n1,2,-1\n")), DataError);
  EXPECT_THROW(load_csv_dataset(write_temp_csv("e.csv", "f0,f1,label\n")), DataError);
  EXPECT_THROW(load_csv_dataset("/no/such/file.csv"), IoError);
}

TEST(CsvStream, SlicesClassesIntoTasks) {
  const std::string train = write_temp_csv(
      "train.csv", "f0,label\n0.1,0\n0.2,0\n1.1,1\n1.2,1\n2.1,2\n2.2,2\n3.1,3\n3.2,3\n");
  const std::string test = write_temp_csv(
      "test.csv", "f0,label\n0.3,0\n1.3,1\n2.3,2\n3.3,3\n");
  const TaskStream stream = class_il_stream_from_batches(load_csv_dataset(train),
                                                         load_csv_dataset(test), 2);
  ASSERT_EQ(stream.n_tasks(), 2);
  EXPECT_EQ(stream.tasks[0].classes_present, (std::vector<int>{0, 1}));
  EXPECT_EQ(stream.tasks[1].classes_present, (std::vector<int>{2, 3}));
  EXPECT_EQ(stream.tasks[0].train.size(), 4u);
  EXPECT_EQ(stream.tasks[1].test.size(), 2u);
  EXPECT_THROW(class_il_stream_from_batches(load_csv_dataset(train), load_csv_dataset(test), 3),
               ConfigError);
}
