#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cflsim/federation.hpp"
#include "cflsim/metrics.hpp"
#include "cflsim/results.hpp"
#include "cflsim/run_config.hpp"

// Sweep driver: cross-product of (lambda, alpha_dir, seed) cells over a
// base config, each cell an independent deterministic run.

namespace cflsim {

struct SweepGrids {
  std::vector<double> lambdas;
  std::vector<double> alpha_dirs;
  std::vector<std::uint64_t> seeds;
};

struct SweepCellResult {
  int cell_index = 0;
  double lambda = 0.0;
  double alpha_dir = 0.0;
  std::uint64_t seed = 0;
  std::optional<MetricsRecord> record;
  std::string error;  // non-empty when the cell failed
};

inline RunConfig sweep_cell_config(const RunConfig& base, double lambda, double alpha_dir,
                                   std::uint64_t seed) {
  RunConfig cfg = base;
  cfg.lambda = lambda;
  cfg.alpha_dir = alpha_dir;
  cfg.seed = seed;
  return cfg;
}

/// Run every (lambda, alpha_dir) cell for every seed. Cells execute on a
/// worker pool but results come back in deterministic (cell, seed) order;
/// a failing cell is recorded and the sweep continues.
inline std::vector<SweepCellResult> sweep(const RunConfig& base_cfg, const SweepGrids& grids,
                                          int threads = 1) {
  if (grids.lambdas.empty() || grids.alpha_dirs.empty() || grids.seeds.empty()) {
    throw ConfigError("sweep grids must be non-empty");
  }

  struct Job {
    int cell_index;
    double lambda;
    double alpha_dir;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  int cell_index = 0;
  for (const double lambda : grids.lambdas) {
    for (const double alpha_dir : grids.alpha_dirs) {
      for (const std::uint64_t seed : grids.seeds) {
        jobs.push_back({cell_index, lambda, alpha_dir, seed});
      }
      ++cell_index;
    }
  }

  std::vector<SweepCellResult> results(jobs.size());
  detail::parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const Job& job = jobs[i];
    SweepCellResult& result = results[i];
    result.cell_index = job.cell_index;
    result.lambda = job.lambda;
    result.alpha_dir = job.alpha_dir;
    result.seed = job.seed;
    try {
      const RunConfig cfg = sweep_cell_config(base_cfg, job.lambda, job.alpha_dir, job.seed);
      validate(cfg);
      const TaskStream stream = build_stream(cfg.stream, cfg.seed);
      const std::vector<Partition> partitions = build_partitions(stream, cfg);
      result.record = run_experiment(cfg, stream, partitions);
    } catch (const std::exception& e) {
      result.error = e.what();
    }
  });
  return results;
}

inline nlohmann::json sweep_cell_to_json(const SweepCellResult& result) {
  if (result.record.has_value()) return record_to_json(*result.record);
  nlohmann::json j;
  j["status"] = "error";
  j["cell_index"] = result.cell_index;
  j["lambda"] = result.lambda;
  j["alpha_dir"] = result.alpha_dir;
  j["seed"] = result.seed;
  j["error"] = result.error;
  return j;
}

/// Append every cell line (successes and failures) in cell order, plus the
/// usual summary and manifest for the successful records.
inline ResultPaths write_sweep_results(const std::vector<SweepCellResult>& results,
                                       const std::string& out_dir, const RunConfig& base_cfg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  const std::string records_path = (fs::path(out_dir) / kRecordsFileName).string();
  {
    std::ofstream out(records_path, std::ios::app);
    if (!out) throw IoError("cannot open " + records_path);
    for (const auto& result : results) out << sweep_cell_to_json(result).dump() << "\n";
  }
  std::vector<MetricsRecord> ok;
  for (const auto& result : results) {
    if (result.record.has_value()) ok.push_back(*result.record);
  }
  ResultPaths paths = write_results({}, out_dir, base_cfg);
  paths.records = records_path;
  {
    std::ofstream out(paths.summary, std::ios::app);
    out.precision(17);
    for (const auto& r : ok) {
      out << r.algo << ',' << r.alpha_dir << ',' << r.lambda << ',' << r.seed << ','
          << r.final_acc << ',' << r.avg_acc << ',' << r.forgetting << ',' << r.wall_ms << "\n";
    }
  }
  return paths;
}

}  // namespace cflsim
