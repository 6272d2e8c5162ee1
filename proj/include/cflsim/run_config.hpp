#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cflsim/data.hpp"
#include "cflsim/errors.hpp"

namespace cflsim {

enum class Algo { FedAvg, FedProx, FlEwc, FlSi, FedSsi };
enum class OptimizerKind { Sgd, Adam };
enum class LrSchedule { Constant, Linear };

inline std::string algo_name(Algo a) {
  switch (a) {
    case Algo::FedAvg: return "fedavg";
    case Algo::FedProx: return "fedprox";
    case Algo::FlEwc: return "fl_ewc";
    case Algo::FlSi: return "fl_si";
    case Algo::FedSsi: return "fedssi";
  }
  throw ConfigError("unknown algo enum value");
}

inline Algo algo_from_name(const std::string& name) {
  if (name == "fedavg") return Algo::FedAvg;
  if (name == "fedprox") return Algo::FedProx;
  if (name == "fl_ewc") return Algo::FlEwc;
  if (name == "fl_si") return Algo::FlSi;
  if (name == "fedssi") return Algo::FedSsi;
  throw ConfigError("unknown algo '" + name +
                    "' (expected fedavg|fedprox|fl_ewc|fl_si|fedssi)");
}

struct PsmRunConfig {
  double eta = 0.05;
  int iters = 0;  // 0 = auto: ceil(rounds * epochs * steps_per_epoch / 40)
  int batch_size = 32;
};

/// Which stream the CLI should build. `synthetic` drives the generators;
/// csv_class_il slices CSV files instead.
struct StreamConfig {
  std::string kind = "class_il";  // class_il | domain_il | csv_class_il
  SyntheticSpec synthetic;
  std::string csv_train;
  std::string csv_test;
};

struct RunConfig {
  Algo algo = Algo::FedAvg;
  int n_clients = 10;
  int rounds_per_task = 20;
  int local_epochs = 2;
  double select_ratio = 1.0;
  double lr = 0.05;
  int batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  LrSchedule lr_schedule = LrSchedule::Constant;
  std::vector<int> hidden_dims{64};
  double reg_strength = 0.0;
  double prox_mu = 0.0;
  std::optional<double> lambda;  // required iff algo == FedSsi
  double eps = 1e-3;
  double alpha_dir = 1.0;
  std::uint64_t seed = 1;
  PsmRunConfig psm;
  StreamConfig stream;

  bool eval_every_round = false;
  bool si_count_aggregation_jumps = false;
  bool boundary_selected_only = false;
};

inline void validate(const RunConfig& cfg) {
  if (cfg.n_clients < 1) throw ConfigError("n_clients must be >= 1");
  if (cfg.rounds_per_task < 1) throw ConfigError("rounds_per_task must be >= 1");
  if (cfg.local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (!(cfg.select_ratio > 0.0) || cfg.select_ratio > 1.0) {
    throw ConfigError("select_ratio must lie in (0,1]");
  }
  const int selected = static_cast<int>(std::ceil(cfg.select_ratio * cfg.n_clients));
  if (selected < 1 || selected > cfg.n_clients) {
    throw ConfigError("ceil(select_ratio * n_clients) must lie in [1, n_clients]");
  }
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  for (const int h : cfg.hidden_dims) {
    if (h < 1) throw ConfigError("hidden_dims entries must be >= 1");
  }
  if (cfg.reg_strength < 0.0) throw ConfigError("reg_strength must be non-negative");
  if (cfg.prox_mu < 0.0) throw ConfigError("prox_mu must be non-negative");
  if (!(cfg.eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(cfg.alpha_dir > 0.0)) throw ConfigError("alpha_dir must be positive");
  if (cfg.algo == Algo::FedSsi) {
    if (!cfg.lambda.has_value()) throw ConfigError("field 'lambda' is required for algo fedssi");
    if (!(*cfg.lambda > 0.0) || !(*cfg.lambda < 1.0)) {
      throw ConfigError("lambda must lie in (0,1)");
    }
    if (!(cfg.psm.eta > 0.0)) throw ConfigError("psm.eta must be positive");
    if (cfg.psm.iters < 0) throw ConfigError("psm.iters must be >= 0 (0 = auto)");
    if (cfg.psm.batch_size < 1) throw ConfigError("psm.batch_size must be >= 1");
  } else if (cfg.lambda.has_value()) {
    if (!(*cfg.lambda > 0.0) || !(*cfg.lambda < 1.0)) {
      throw ConfigError("lambda must lie in (0,1)");
    }
  }
  if (cfg.stream.kind == "class_il" || cfg.stream.kind == "domain_il") {
    validate_spec(cfg.stream.synthetic,
                  cfg.stream.kind == "class_il" ? TaskKind::ClassIl : TaskKind::DomainIl);
  } else if (cfg.stream.kind == "csv_class_il") {
    if (cfg.stream.csv_train.empty() || cfg.stream.csv_test.empty()) {
      throw ConfigError("csv_class_il streams need stream.csv_train and stream.csv_test");
    }
    if (cfg.stream.synthetic.n_tasks < 1) throw ConfigError("n_tasks must be >= 1");
  } else {
    throw ConfigError("unknown stream.kind '" + cfg.stream.kind +
                      "' (expected class_il|domain_il|csv_class_il)");
  }
}

/// Build the task stream a config asks for.
inline TaskStream build_stream(const StreamConfig& stream, std::uint64_t seed) {
  if (stream.kind == "class_il") return gen_class_il_stream(stream.synthetic, seed);
  if (stream.kind == "domain_il") return gen_domain_il_stream(stream.synthetic, seed);
  if (stream.kind == "csv_class_il") {
    const Batch train = load_csv_dataset(stream.csv_train);
    const Batch test = load_csv_dataset(stream.csv_test);
    return class_il_stream_from_batches(train, test, stream.synthetic.n_tasks);
  }
  throw ConfigError("unknown stream.kind '" + stream.kind + "'");
}

/// One Dirichlet partition per task, derived from the run seed.
inline std::vector<Partition> build_partitions(const TaskStream& stream, const RunConfig& cfg) {
  std::vector<Partition> partitions;
  partitions.reserve(stream.tasks.size());
  for (const auto& task : stream.tasks) {
    partitions.push_back(dirichlet_partition(task, cfg.n_clients, cfg.alpha_dir, cfg.seed));
  }
  return partitions;
}

}  // namespace cflsim
