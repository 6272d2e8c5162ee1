#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cflsim/errors.hpp"
#include "cflsim/run_config.hpp"

// Config file handling. Parsing is strict: unknown fields are rejected by
// name, so typos never silently fall back to defaults.

namespace cflsim {

namespace detail {

class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string context)
      : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + " must be a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T require(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(context_ + ": missing required field '" + key + "'");
    return take<T>(key);
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) {
    if (!j_.contains(key)) return fallback;
    return take<T>(key);
  }

  const nlohmann::json* take_object(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    consumed_.insert(key);
    const auto& v = j_.at(key);
    if (!v.is_object()) throw ConfigError(context_ + ": field '" + key + "' must be an object");
    return &v;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (consumed_.find(it.key()) == consumed_.end()) {
        throw ConfigError(context_ + ": unknown field '" + it.key() + "'");
      }
    }
  }

 private:
  template <typename T>
  T take(const std::string& key) {
    consumed_.insert(key);
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(context_ + ": field '" + key + "' has the wrong type");
    }
  }

  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> consumed_;
};

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  detail::StrictObject top(j, "config");
  RunConfig cfg;
  cfg.algo = algo_from_name(top.require<std::string>("algo"));
  cfg.n_clients = top.get_or("n_clients", cfg.n_clients);
  cfg.rounds_per_task = top.get_or("rounds_per_task", cfg.rounds_per_task);
  cfg.local_epochs = top.get_or("local_epochs", cfg.local_epochs);
  cfg.select_ratio = top.get_or("select_ratio", cfg.select_ratio);
  cfg.lr = top.get_or("lr", cfg.lr);
  cfg.batch_size = top.get_or("batch_size", cfg.batch_size);
  {
    const std::string opt = top.get_or<std::string>("optimizer", "sgd");
    if (opt == "sgd") {
      cfg.optimizer = OptimizerKind::Sgd;
    } else if (opt == "adam") {
      cfg.optimizer = OptimizerKind::Adam;
    } else {
      throw ConfigError("optimizer must be 'sgd' or 'adam', got '" + opt + "'");
    }
  }
  {
    const std::string sched = top.get_or<std::string>("lr_schedule", "constant");
    if (sched == "constant") {
      cfg.lr_schedule = LrSchedule::Constant;
    } else if (sched == "linear") {
      cfg.lr_schedule = LrSchedule::Linear;
    } else {
      throw ConfigError("lr_schedule must be 'constant' or 'linear', got '" + sched + "'");
    }
  }
  cfg.hidden_dims = top.get_or("hidden_dims", cfg.hidden_dims);
  cfg.reg_strength = top.get_or("reg_strength", cfg.reg_strength);
  cfg.prox_mu = top.get_or("prox_mu", cfg.prox_mu);
  if (top.has("lambda")) cfg.lambda = top.require<double>("lambda");
  cfg.eps = top.get_or("eps", cfg.eps);
  cfg.alpha_dir = top.get_or("alpha_dir", cfg.alpha_dir);
  cfg.seed = top.get_or<std::uint64_t>("seed", cfg.seed);
  cfg.eval_every_round = top.get_or("eval_every_round", cfg.eval_every_round);
  cfg.si_count_aggregation_jumps =
      top.get_or("si_count_aggregation_jumps", cfg.si_count_aggregation_jumps);
  cfg.boundary_selected_only = top.get_or("boundary_selected_only", cfg.boundary_selected_only);

  if (const auto* pj = top.take_object("psm")) {
    detail::StrictObject psm(*pj, "config.psm");
    cfg.psm.eta = psm.get_or("eta", cfg.psm.eta);
    cfg.psm.iters = psm.get_or("iters", cfg.psm.iters);
    cfg.psm.batch_size = psm.get_or("batch_size", cfg.psm.batch_size);
    psm.finish();
  }

  if (const auto* sj = top.take_object("stream")) {
    detail::StrictObject stream(*sj, "config.stream");
    cfg.stream.kind = stream.get_or<std::string>("kind", cfg.stream.kind);
    auto& syn = cfg.stream.synthetic;
    syn.feature_dim = stream.get_or("feature_dim", syn.feature_dim);
    syn.total_classes = stream.get_or("total_classes", syn.total_classes);
    syn.n_tasks = stream.get_or("n_tasks", syn.n_tasks);
    syn.samples_per_class_train =
        stream.get_or("samples_per_class_train", syn.samples_per_class_train);
    syn.samples_per_class_test =
        stream.get_or("samples_per_class_test", syn.samples_per_class_test);
    syn.cluster_spread = stream.get_or("cluster_spread", syn.cluster_spread);
    syn.domain_shift.rotation_angle_per_task =
        stream.get_or("rotation_angle_per_task", syn.domain_shift.rotation_angle_per_task);
    syn.domain_shift.bias_shift_per_task =
        stream.get_or("bias_shift_per_task", syn.domain_shift.bias_shift_per_task);
    cfg.stream.csv_train = stream.get_or<std::string>("csv_train", cfg.stream.csv_train);
    cfg.stream.csv_test = stream.get_or<std::string>("csv_test", cfg.stream.csv_test);
    stream.finish();
  }

  top.finish();
  validate(cfg);
  return cfg;
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["algo"] = algo_name(cfg.algo);
  j["n_clients"] = cfg.n_clients;
  j["rounds_per_task"] = cfg.rounds_per_task;
  j["local_epochs"] = cfg.local_epochs;
  j["select_ratio"] = cfg.select_ratio;
  j["lr"] = cfg.lr;
  j["batch_size"] = cfg.batch_size;
  j["optimizer"] = cfg.optimizer == OptimizerKind::Sgd ? "sgd" : "adam";
  j["lr_schedule"] = cfg.lr_schedule == LrSchedule::Constant ? "constant" : "linear";
  j["hidden_dims"] = cfg.hidden_dims;
  j["reg_strength"] = cfg.reg_strength;
  j["prox_mu"] = cfg.prox_mu;
  if (cfg.lambda.has_value()) j["lambda"] = *cfg.lambda;
  j["eps"] = cfg.eps;
  j["alpha_dir"] = cfg.alpha_dir;
  j["seed"] = cfg.seed;
  j["eval_every_round"] = cfg.eval_every_round;
  j["si_count_aggregation_jumps"] = cfg.si_count_aggregation_jumps;
  j["boundary_selected_only"] = cfg.boundary_selected_only;
  j["psm"] = {{"eta", cfg.psm.eta}, {"iters", cfg.psm.iters}, {"batch_size", cfg.psm.batch_size}};
  nlohmann::json stream;
  stream["kind"] = cfg.stream.kind;
  stream["feature_dim"] = cfg.stream.synthetic.feature_dim;
  stream["total_classes"] = cfg.stream.synthetic.total_classes;
  stream["n_tasks"] = cfg.stream.synthetic.n_tasks;
  stream["samples_per_class_train"] = cfg.stream.synthetic.samples_per_class_train;
  stream["samples_per_class_test"] = cfg.stream.synthetic.samples_per_class_test;
  stream["cluster_spread"] = cfg.stream.synthetic.cluster_spread;
  stream["rotation_angle_per_task"] = cfg.stream.synthetic.domain_shift.rotation_angle_per_task;
  stream["bias_shift_per_task"] = cfg.stream.synthetic.domain_shift.bias_shift_per_task;
  if (!cfg.stream.csv_train.empty()) stream["csv_train"] = cfg.stream.csv_train;
  if (!cfg.stream.csv_test.empty()) stream["csv_test"] = cfg.stream.csv_test;
  j["stream"] = stream;
  return j;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON (" + e.what() + ")");
  }
  try {
    return config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::string to_hex(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

/// Stable fingerprint of the full configuration (keys are serialized in
/// sorted order).
inline std::string config_digest(const RunConfig& cfg) {
  return to_hex(fnv1a64(config_to_json(cfg).dump()));
}

}  // namespace cflsim
