#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cflsim/config.hpp"
#include "cflsim/data.hpp"
#include "cflsim/errors.hpp"
#include "cflsim/metrics.hpp"
#include "cflsim/nn.hpp"
#include "cflsim/psm.hpp"
#include "cflsim/regularizers.hpp"
#include "cflsim/rng.hpp"
#include "cflsim/run_config.hpp"

// The round/task engine: client selection, local training under each
// algorithm, sample-weighted aggregation, and the task-boundary protocol
// (surrogate training / consolidation / Fisher estimation).

namespace cflsim {

struct TaskShard {
  std::vector<std::size_t> rows;  // indices into the task's train batch
  bool available = false;
  bool retired = false;
  std::int64_t last_read_event = -1;
  std::int64_t retired_event = -1;
};

struct ClientState {
  int client_id = 0;
  std::vector<TaskShard> shards;  // one per task
  ParamVector local_params;       // result of the last local_train
  std::optional<SiState> si;      // FlSi / FedSsi
  std::optional<EwcState> ewc;    // FlEwc
  bool participated_in_task = false;
  bool has_stale_local = false;  // local_params refer to an earlier round of this task
  std::int64_t event_clock = 0;  // per-client ordering of shard reads vs retirement
};

struct ServerState {
  MlpModel global;
  long round_global = 0;
  int task_index = 0;
  std::uint64_t seed = 0;
};

/// Uniform sample without replacement of ceil(ratio * k_total) client ids,
/// deterministic in (seed, round_global). Returned sorted.
inline std::vector<int> select_clients(const ServerState& server, int k_total, double ratio) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("select ratio must lie in (0,1]");
  if (k_total < 1) throw ConfigError("need at least one client");
  const auto count = static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(k_total)));
  auto rng = RngStream::derive(server.seed, stream_tag::kSelection,
                               static_cast<std::uint64_t>(server.round_global));
  auto picks = rng.sample_without_replacement(static_cast<std::size_t>(k_total), count);
  std::vector<int> ids(picks.begin(), picks.end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Weighted elementwise mean with Neumaier-compensated sums, so the result
/// is insensitive (to 1 ulp) to the order models arrive in. Callers still
/// pass models in client-id order for bitwise reproducibility.
inline ParamVector aggregate(const std::vector<ParamVector>& models,
                             const std::vector<double>& weights) {
  if (models.empty()) throw AggregationError("no models to aggregate");
  if (models.size() != weights.size()) {
    throw AggregationError("model and weight counts differ");
  }
  for (std::size_t m = 1; m < models.size(); ++m) {
    if (!models[0].same_layout(models[m])) {
      throw AggregationError("model " + std::to_string(m) + " has a mismatched layout");
    }
  }
  double weight_sum = 0.0, weight_comp = 0.0;
  for (const double w : weights) {
    if (w < 0.0) throw AggregationError("negative aggregation weight");
    const double t = weight_sum + w;
    weight_comp += std::abs(weight_sum) >= std::abs(w) ? (weight_sum - t) + w : (w - t) + weight_sum;
    weight_sum = t;
  }
  weight_sum += weight_comp;
  if (!(weight_sum > 0.0)) throw AggregationError("aggregation weights sum to zero");

  const std::size_t dim = models[0].size();
  std::vector<double> sum(dim, 0.0), comp(dim, 0.0);
  for (std::size_t m = 0; m < models.size(); ++m) {
    const double w = weights[m];
    if (w == 0.0) continue;
    const auto& vals = models[m].values();
    for (std::size_t i = 0; i < dim; ++i) {
      const double x = w * vals[i];
      const double t = sum[i] + x;
      comp[i] += std::abs(sum[i]) >= std::abs(x) ? (sum[i] - t) + x : (x - t) + sum[i];
      sum[i] = t;
    }
  }
  ParamVector out(models[0].layout());
  for (std::size_t i = 0; i < dim; ++i) out[i] = (sum[i] + comp[i]) / weight_sum;
  out.check_finite("aggregate");
  return out;
}

/// Materialize a client's shard of a task's training data. Reads are
/// logged against the client's event clock; touching a retired shard is a
/// protocol violation (no rehearsal of finished tasks).
inline Batch read_shard(ClientState& client, const TaskStream& stream, int task_id) {
  auto& shard = client.shards.at(static_cast<std::size_t>(task_id));
  if (!shard.available) {
    throw ProtocolError("client " + std::to_string(client.client_id) + " has no shard for task " +
                        std::to_string(task_id));
  }
  if (shard.retired) {
    throw ProtocolError("client " + std::to_string(client.client_id) +
                        " read the retired shard of task " + std::to_string(task_id));
  }
  shard.last_read_event = ++client.event_clock;
  const Batch& source = stream.tasks.at(static_cast<std::size_t>(task_id)).train;
  Batch out;
  out.inputs.cols = source.inputs.cols;
  out.inputs.rows = shard.rows.size();
  out.inputs.data.resize(shard.rows.size() * source.inputs.cols);
  out.labels.resize(shard.rows.size());
  for (std::size_t i = 0; i < shard.rows.size(); ++i) {
    const std::size_t r = shard.rows[i];
    std::copy_n(source.inputs.data.data() + r * source.inputs.cols, source.inputs.cols,
                out.inputs.data.data() + i * source.inputs.cols);
    out.labels[i] = source.labels[r];
  }
  return out;
}

inline void retire_shard(ClientState& client, int task_id) {
  auto& shard = client.shards.at(static_cast<std::size_t>(task_id));
  shard.retired = true;
  shard.retired_event = ++client.event_clock;
}

namespace detail {

inline ParamVector algo_penalty_grad(const ClientState& client, const RunConfig& cfg,
                                     const ParamVector& w, const ParamVector& global_w) {
  switch (cfg.algo) {
    case Algo::FedAvg:
      return ParamVector(w.layout());
    case Algo::FedProx:
      return prox_penalty(w, global_w, cfg.prox_mu).grad;
    case Algo::FlEwc:
      return ewc_penalty(*client.ewc, w).grad;
    case Algo::FlSi:
    case Algo::FedSsi:
      return si_penalty(*client.si, w).grad;
  }
  throw ConfigError("unknown algo");
}

inline Batch slice_batch(const Batch& source, const std::vector<std::size_t>& order,
                         std::size_t begin, std::size_t end) {
  Batch out;
  const std::size_t dim = source.inputs.cols;
  out.inputs.cols = dim;
  out.inputs.rows = end - begin;
  out.inputs.data.resize((end - begin) * dim);
  out.labels.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t r = order[i];
    std::copy_n(source.inputs.data.data() + r * dim, dim,
                out.inputs.data.data() + (i - begin) * dim);
    out.labels[i - begin] = source.labels[r];
  }
  return out;
}

}  // namespace detail

/// E epochs of minibatch descent on the current shard, starting from a
/// copy of the broadcast global weights, with the algorithm's penalty
/// gradient added on top of the data-loss gradient. FlSi feeds every step
/// (data gradient, actual delta) into its importance accumulator. Returns
/// the shard size used as the client's aggregation weight.
inline std::size_t local_train(ClientState& client, const ParamVector& global_w,
                               const RunConfig& cfg, const TaskStream& stream,
                               const MlpModel& model_template, int task_id, long round_global,
                               double lr_round) {
  const Batch shard = read_shard(client, stream, task_id);

  // Optional ablation: count the jump from the previous local endpoint to
  // the fresh broadcast as trajectory motion.
  if (cfg.si_count_aggregation_jumps && cfg.algo == Algo::FlSi && client.has_stale_local &&
      client.si.has_value()) {
    MlpModel at_old = model_template;
    at_old.params = client.local_params;
    const ParamVector g_full = backward(at_old, shard);
    const ParamVector jump = subtract(global_w, client.local_params);
    si_accumulate(*client.si, g_full, jump);
  }

  ParamVector w = global_w;
  MlpModel scratch = model_template;
  auto rng = RngStream::derive(cfg.seed, stream_tag::kClientRound,
                               static_cast<std::uint64_t>(client.client_id),
                               static_cast<std::uint64_t>(round_global));
  std::optional<AdamState> adam;
  if (cfg.optimizer == OptimizerKind::Adam) adam.emplace(w.layout());

  const std::size_t n = shard.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t begin = 0; begin < n; begin += batch) {
      const std::size_t end = std::min(begin + batch, n);
      const Batch minibatch = detail::slice_batch(shard, order, begin, end);
      scratch.params = w;
      ParamVector g_data = backward(scratch, minibatch);
      ParamVector g_total = g_data;
      if (cfg.algo != Algo::FedAvg) {
        g_total.add_scaled(detail::algo_penalty_grad(client, cfg, w, global_w), 1.0);
      }
      const StepResult step = adam ? adam_step(w, g_total, lr_round, *adam)
                                   : sgd_step(w, g_total, lr_round);
      if (cfg.algo == Algo::FlSi) {
        si_accumulate(*client.si, g_data, step.delta);
      }
      w = std::move(step.params);
    }
  }

  client.local_params = std::move(w);
  client.has_stale_local = true;
  client.participated_in_task = true;
  return n;
}

/// Iterations the surrogate gets by default: 1/40 of one task's local
/// gradient-step budget.
inline int auto_psm_iters(const RunConfig& cfg, std::size_t shard_size) {
  const double steps_per_epoch =
      std::ceil(static_cast<double>(shard_size) / static_cast<double>(cfg.batch_size));
  const double budget = static_cast<double>(cfg.rounds_per_task) *
                        static_cast<double>(cfg.local_epochs) * steps_per_epoch;
  return std::max(1, static_cast<int>(std::ceil(budget / 40.0)));
}

/// End-of-task protocol for one client. FedSsi trains its surrogate on the
/// outgoing shard and hands the contributions off; FlSi consolidates its
/// local trajectory; FlEwc refreshes its Fisher estimate (accumulated
/// across tasks); FedAvg/FedProx do nothing.
inline void task_boundary(ClientState& client, const ServerState& server, const RunConfig& cfg,
                          const TaskStream& stream, const MlpModel& model_template,
                          int task_id) {
  switch (cfg.algo) {
    case Algo::FedAvg:
    case Algo::FedProx:
      return;
    case Algo::FlSi:
      si_consolidate(*client.si, server.global.params);
      return;
    case Algo::FlEwc: {
      const Batch shard = read_shard(client, stream, task_id);
      MlpModel at_global = model_template;
      at_global.params = server.global.params;
      EwcState fresh = ewc_estimate_fisher(
          at_global, shard, static_cast<int>(shard.size()),
          derive_seed(cfg.seed, stream_tag::kFisher, static_cast<std::uint64_t>(client.client_id),
                      static_cast<std::uint64_t>(task_id)));
      client.ewc->fisher.add_scaled(fresh.fisher, 1.0);
      client.ewc->anchor = fresh.anchor;
      return;
    }
    case Algo::FedSsi: {
      const Batch shard = read_shard(client, stream, task_id);
      PsmConfig psm_cfg;
      psm_cfg.lambda = *cfg.lambda;
      psm_cfg.eta = cfg.psm.eta;
      psm_cfg.batch_size = cfg.psm.batch_size;
      psm_cfg.iters = cfg.psm.iters > 0 ? cfg.psm.iters : auto_psm_iters(cfg, shard.size());
      const PsmState psm = train_psm(
          server.global.params, model_template, shard, psm_cfg,
          derive_seed(cfg.seed, stream_tag::kPsm, static_cast<std::uint64_t>(client.client_id),
                      static_cast<std::uint64_t>(task_id)));
      psm_contribution_handoff(psm, *client.si);
      return;
    }
  }
  throw ConfigError("unknown algo");
}

/// Shard lifecycle log, exported for the no-rehearsal audit, plus the
/// running average-accuracy value maintained during the run.
struct RunTrace {
  struct ShardAudit {
    int client_id;
    int task_id;
    std::int64_t last_read_event;
    std::int64_t retired_event;
  };
  std::vector<ShardAudit> shard_audits;
  double incremental_avg_acc = 0.0;
};

struct RunOptions {
  int threads = 1;
  RunTrace* trace = nullptr;
};

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
        break;
      }
    }
  };
  const std::size_t pool_size = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(pool_size);
  for (std::size_t t = 0; t < pool_size; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Worker-pool width: CFLSIM_THREADS if set, else hardware concurrency.
inline int resolve_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  int threads = static_cast<int>(hw);
  if (const char* env = std::getenv("CFLSIM_THREADS")) {
    try {
      threads = std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError("CFLSIM_THREADS must be an integer");
    }
  }
  return threads;
}

/// Run the full task/round protocol and return the metrics record.
/// Deterministic in cfg.seed: per-(client, round) randomness is derived,
/// never shared, so serial and parallel execution agree bitwise.
inline MetricsRecord run_experiment(const RunConfig& cfg, const TaskStream& stream,
                                    const std::vector<Partition>& partitions,
                                    const RunOptions& opts = {}) {
  validate(cfg);
  const auto t_start = std::chrono::steady_clock::now();
  const int n_tasks = stream.n_tasks();
  if (static_cast<int>(partitions.size()) != n_tasks) {
    throw ProtocolError("need one partition per task");
  }

  std::vector<int> dims;
  dims.push_back(stream.feature_dim);
  for (const int h : cfg.hidden_dims) dims.push_back(h);
  dims.push_back(stream.total_classes);

  ServerState server;
  server.global = init_model(dims, cfg.seed);
  server.seed = cfg.seed;
  const MlpModel model_template = server.global;

  std::vector<ClientState> clients(static_cast<std::size_t>(cfg.n_clients));
  for (int k = 0; k < cfg.n_clients; ++k) {
    auto& client = clients[static_cast<std::size_t>(k)];
    client.client_id = k;
    client.shards.resize(static_cast<std::size_t>(n_tasks));
    if (cfg.algo == Algo::FlSi || cfg.algo == Algo::FedSsi) {
      client.si = make_si_state(server.global.params, cfg.eps, cfg.reg_strength);
    } else if (cfg.algo == Algo::FlEwc) {
      client.ewc = EwcState{zeros_like(server.global.params), server.global.params,
                            cfg.reg_strength};
    }
  }

  const long total_rounds = static_cast<long>(n_tasks) * cfg.rounds_per_task;
  AccuracyMatrix matrix;
  std::vector<Batch> tests_so_far;
  std::vector<int> rounds_to_best;
  double running_avg_sum = 0.0;

  for (int t = 0; t < n_tasks; ++t) {
    server.task_index = t;
    const auto& partition = partitions[static_cast<std::size_t>(t)];
    if (partition.n_clients() != cfg.n_clients) {
      throw ProtocolError("partition for task " + std::to_string(t) +
                          " covers a different client count");
    }
    for (auto& client : clients) {
      auto& shard = client.shards[static_cast<std::size_t>(t)];
      shard.rows = partition.assignments[static_cast<std::size_t>(client.client_id)];
      shard.available = true;
      client.participated_in_task = false;
      client.has_stale_local = false;
    }
    tests_so_far.push_back(stream.tasks[static_cast<std::size_t>(t)].test);

    double best_acc = -1.0;
    int best_round = 0;

    for (int r = 0; r < cfg.rounds_per_task; ++r) {
      const long round_global = static_cast<long>(t) * cfg.rounds_per_task + r;
      server.round_global = round_global;
      double lr_round = cfg.lr;
      if (cfg.lr_schedule == LrSchedule::Linear) {
        lr_round = cfg.lr * static_cast<double>(total_rounds - round_global) /
                   static_cast<double>(total_rounds);
      }

      const std::vector<int> selected = select_clients(server, cfg.n_clients, cfg.select_ratio);
      std::vector<ParamVector> local_models(selected.size());
      std::vector<double> weights(selected.size());
      detail::parallel_for(selected.size(), opts.threads, [&](std::size_t i) {
        auto& client = clients[static_cast<std::size_t>(selected[i])];
        const std::size_t n_used = local_train(client, server.global.params, cfg, stream,
                                               model_template, t, round_global, lr_round);
        local_models[i] = client.local_params;
        weights[i] = static_cast<double>(n_used);
      });
      server.global.params = aggregate(local_models, weights);

      if (cfg.eval_every_round) {
        const std::vector<double> accs = eval_global(server.global, tests_so_far);
        double pooled_correct = 0.0, pooled_total = 0.0;
        for (std::size_t j = 0; j < accs.size(); ++j) {
          const double size_j = static_cast<double>(tests_so_far[j].size());
          pooled_correct += accs[j] * size_j;
          pooled_total += size_j;
        }
        const double pooled = pooled_correct / pooled_total;
        if (pooled > best_acc) {
          best_acc = pooled;
          best_round = r;
        }
      }
    }
    if (cfg.eval_every_round) rounds_to_best.push_back(best_round);

    matrix.rows.push_back(eval_global(server.global, tests_so_far));
    {
      const auto& row = matrix.rows.back();
      double row_sum = 0.0;
      for (const double a : row) row_sum += a;
      running_avg_sum += row_sum / static_cast<double>(row.size());
    }

    detail::parallel_for(clients.size(), opts.threads, [&](std::size_t k) {
      auto& client = clients[k];
      if (cfg.boundary_selected_only && !client.participated_in_task) return;
      task_boundary(client, server, cfg, stream, model_template, t);
    });
    for (auto& client : clients) retire_shard(client, t);
  }

  MetricsRecord record;
  record.matrix = matrix;
  record.final_acc = final_accuracy(matrix);
  record.avg_acc = average_accuracy(matrix);
  record.forgetting = n_tasks >= 2 ? forgetting(matrix) : 0.0;
  record.config_digest = config_digest(cfg);
  record.seed = cfg.seed;
  record.algo = algo_name(cfg.algo);
  record.alpha_dir = cfg.alpha_dir;
  record.lambda = cfg.lambda.value_or(0.0);
  record.rounds_to_best = rounds_to_best;
  record.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t_start)
                       .count();

  if (opts.trace != nullptr) {
    opts.trace->incremental_avg_acc = running_avg_sum / static_cast<double>(n_tasks);
    for (const auto& client : clients) {
      for (int t = 0; t < n_tasks; ++t) {
        const auto& shard = client.shards[static_cast<std::size_t>(t)];
        opts.trace->shard_audits.push_back(
            {client.client_id, t, shard.last_read_event, shard.retired_event});
      }
    }
  }
  return record;
}

}  // namespace cflsim
