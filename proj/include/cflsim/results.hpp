#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "cflsim/config.hpp"
#include "cflsim/errors.hpp"
#include "cflsim/metrics.hpp"
#include "cflsim/run_config.hpp"

// Record persistence: line-delimited JSON records, a summary CSV, a run
// manifest, the determinism hash, and report aggregation.

namespace cflsim {

inline constexpr const char* kVersion = "cflsim 0.1.0";
inline constexpr const char* kRecordsFileName = "records.jsonl";
inline constexpr const char* kSummaryFileName = "summary.csv";
inline constexpr const char* kManifestFileName = "manifest.json";

inline nlohmann::json record_to_json(const MetricsRecord& record) {
  nlohmann::json j;
  j["status"] = "ok";
  j["algo"] = record.algo;
  j["alpha_dir"] = record.alpha_dir;
  j["lambda"] = record.lambda;
  j["seed"] = record.seed;
  j["final_acc"] = record.final_acc;
  j["avg_acc"] = record.avg_acc;
  j["forgetting"] = record.forgetting;
  j["config_digest"] = record.config_digest;
  j["wall_ms"] = record.wall_ms;
  j["matrix"] = record.matrix.rows;
  if (!record.rounds_to_best.empty()) j["rounds_to_best"] = record.rounds_to_best;
  return j;
}

inline MetricsRecord record_from_json(const nlohmann::json& j) {
  MetricsRecord record;
  record.algo = j.at("algo").get<std::string>();
  record.alpha_dir = j.at("alpha_dir").get<double>();
  record.lambda = j.at("lambda").get<double>();
  record.seed = j.at("seed").get<std::uint64_t>();
  record.final_acc = j.at("final_acc").get<double>();
  record.avg_acc = j.at("avg_acc").get<double>();
  record.forgetting = j.at("forgetting").get<double>();
  record.config_digest = j.at("config_digest").get<std::string>();
  record.wall_ms = j.at("wall_ms").get<std::int64_t>();
  record.matrix.rows = j.at("matrix").get<std::vector<std::vector<double>>>();
  if (j.contains("rounds_to_best")) {
    record.rounds_to_best = j.at("rounds_to_best").get<std::vector<int>>();
  }
  return record;
}

/// Canonical serialization with volatile fields (wall_ms) removed; the
/// basis of the determinism hash.
inline std::string canonical_record(const nlohmann::json& record_json) {
  nlohmann::json j = record_json;
  j.erase("wall_ms");
  return j.dump();
}

inline std::uint64_t determinism_hash_line(const nlohmann::json& record_json) {
  return fnv1a64(canonical_record(record_json));
}

/// Hash of a whole records.jsonl file, ignoring wall_ms on every line.
inline std::string hash_record_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open record file " + path);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": bad record line (" + e.what() + ")");
    }
    const std::string canon = canonical_record(j);
    for (const unsigned char c : canon) {
      hash ^= c;
      hash *= 0x100000001b3ULL;
    }
    hash ^= '\n';
    hash *= 0x100000001b3ULL;
  }
  return to_hex(hash);
}

struct ResultPaths {
  std::string records;
  std::string summary;
  std::string manifest;
};

inline std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&tt, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

/// Persist records (appended one JSON object per line), the summary CSV,
/// and a manifest sufficient to re-run bit-identically.
inline ResultPaths write_results(const std::vector<MetricsRecord>& records,
                                 const std::string& out_dir, const RunConfig& base_cfg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

  ResultPaths paths;
  paths.records = (fs::path(out_dir) / kRecordsFileName).string();
  paths.summary = (fs::path(out_dir) / kSummaryFileName).string();
  paths.manifest = (fs::path(out_dir) / kManifestFileName).string();

  {
    std::ofstream out(paths.records, std::ios::app);
    if (!out) throw IoError("cannot open " + paths.records);
    for (const auto& record : records) out << record_to_json(record).dump() << "\n";
  }
  {
    const bool fresh = !fs::exists(paths.summary) || fs::file_size(paths.summary) == 0;
    std::ofstream out(paths.summary, std::ios::app);
    if (!out) throw IoError("cannot open " + paths.summary);
    if (fresh) out << "algo,alpha_dir,lambda,seed,final_acc,avg_acc,forgetting,wall_ms\n";
    out.precision(17);
    for (const auto& r : records) {
      out << r.algo << ',' << r.alpha_dir << ',' << r.lambda << ',' << r.seed << ','
          << r.final_acc << ',' << r.avg_acc << ',' << r.forgetting << ',' << r.wall_ms << "\n";
    }
  }
  {
    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["timestamp"] = iso_timestamp();
    manifest["config"] = config_to_json(base_cfg);
    manifest["config_digest"] = config_digest(base_cfg);
    std::ofstream out(paths.manifest);
    if (!out) throw IoError("cannot open " + paths.manifest);
    out << manifest.dump(2) << "\n";
  }
  return paths;
}

inline std::vector<MetricsRecord> load_records(const std::string& records_path) {
  std::ifstream in(records_path);
  if (!in) throw IoError("cannot open record file " + records_path);
  std::vector<MetricsRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(records_path + ":" + std::to_string(line_no) + ": bad record (" + e.what() +
                      ")");
    }
    if (j.value("status", "ok") != "ok") continue;  // skip failed sweep cells
    records.push_back(record_from_json(j));
  }
  return records;
}

struct GroupStats {
  std::string algo;
  double alpha_dir = 0.0;
  double lambda = 0.0;
  int count = 0;
  double final_mean = 0.0, final_std = 0.0;
  double avg_mean = 0.0, avg_std = 0.0;
  double forgetting_mean = 0.0, forgetting_std = 0.0;
};

/// mean +- std per (algo, alpha_dir, lambda) group; sample std, zero for
/// singleton groups.
inline std::vector<GroupStats> aggregate_records(const std::vector<MetricsRecord>& records) {
  std::map<std::tuple<std::string, double, double>, std::vector<const MetricsRecord*>> groups;
  for (const auto& r : records) groups[{r.algo, r.alpha_dir, r.lambda}].push_back(&r);

  const auto mean_std = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (const double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (const double x : xs) var += (x - mean) * (x - mean);
    var = xs.size() > 1 ? var / static_cast<double>(xs.size() - 1) : 0.0;
    return std::pair<double, double>{mean, std::sqrt(var)};
  };

  std::vector<GroupStats> out;
  for (const auto& [key, members] : groups) {
    GroupStats g;
    std::tie(g.algo, g.alpha_dir, g.lambda) = key;
    g.count = static_cast<int>(members.size());
    std::vector<double> finals, avgs, forgets;
    for (const auto* r : members) {
      finals.push_back(r->final_acc);
      avgs.push_back(r->avg_acc);
      forgets.push_back(r->forgetting);
    }
    std::tie(g.final_mean, g.final_std) = mean_std(finals);
    std::tie(g.avg_mean, g.avg_std) = mean_std(avgs);
    std::tie(g.forgetting_mean, g.forgetting_std) = mean_std(forgets);
    out.push_back(g);
  }
  return out;
}

inline std::string render_report_csv(const std::vector<GroupStats>& groups) {
  std::ostringstream out;
  out.precision(6);
  out << "algo,alpha_dir,lambda,n,final_acc_mean,final_acc_std,avg_acc_mean,avg_acc_std,"
         "forgetting_mean,forgetting_std\n";
  for (const auto& g : groups) {
    out << g.algo << ',' << g.alpha_dir << ',' << g.lambda << ',' << g.count << ','
        << g.final_mean << ',' << g.final_std << ',' << g.avg_mean << ',' << g.avg_std << ','
        << g.forgetting_mean << ',' << g.forgetting_std << "\n";
  }
  return out.str();
}

inline std::string render_report_md(const std::vector<GroupStats>& groups) {
  std::ostringstream out;
  out << "| algo | alpha_dir | lambda | n | A(f) | avg acc | forgetting |\n";
  out << "|------|-----------|--------|---|------|---------|------------|\n";
  char buf[64];
  const auto cell = [&buf](double mean, double stddev) {
    std::snprintf(buf, sizeof(buf), "%.4f +- %.4f", mean, stddev);
    return std::string(buf);
  };
  for (const auto& g : groups) {
    out << "| " << g.algo << " | " << g.alpha_dir << " | " << g.lambda << " | " << g.count
        << " | " << cell(g.final_mean, g.final_std) << " | " << cell(g.avg_mean, g.avg_std)
        << " | " << cell(g.forgetting_mean, g.forgetting_std) << " |\n";
  }
  return out.str();
}

}  // namespace cflsim
