#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cflsim/cflsim.hpp"

namespace {

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::string token;
  std::stringstream ss(text);
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) out.push_back(token);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  for (const auto& token : split_commas(text)) {
    try {
      out.push_back(std::stod(token));
    } catch (const std::exception&) {
      throw cflsim::ConfigError(flag + ": cannot parse '" + token + "' as a number");
    }
  }
  if (out.empty()) throw cflsim::ConfigError(flag + ": empty list");
  return out;
}

// comma list of seeds; a token "a..b" expands to the inclusive range
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& token : split_commas(text)) {
    const auto dots = token.find("..");
    try {
      if (dots == std::string::npos) {
        out.push_back(std::stoull(token));
      } else {
        const std::uint64_t lo = std::stoull(token.substr(0, dots));
        const std::uint64_t hi = std::stoull(token.substr(dots + 2));
        if (hi < lo) throw cflsim::ConfigError("--seeds: empty range " + token);
        for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
      }
    } catch (const cflsim::ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw cflsim::ConfigError("--seeds: cannot parse '" + token + "'");
    }
  }
  if (out.empty()) throw cflsim::ConfigError("--seeds: empty list");
  return out;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            std::optional<std::string> algo, const std::string& out_dir) {
  cflsim::RunConfig cfg = cflsim::load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (algo) cfg.algo = cflsim::algo_from_name(*algo);
  cflsim::validate(cfg);

  const cflsim::TaskStream stream = cflsim::build_stream(cfg.stream, cfg.seed);
  const std::vector<cflsim::Partition> partitions = cflsim::build_partitions(stream, cfg);
  cflsim::RunOptions opts;
  opts.threads = cflsim::resolve_threads();
  const cflsim::MetricsRecord record = cflsim::run_experiment(cfg, stream, partitions, opts);
  const cflsim::ResultPaths paths = cflsim::write_results({record}, out_dir, cfg);

  std::cout << "algo=" << record.algo << " seed=" << record.seed
            << " final_acc=" << record.final_acc << " avg_acc=" << record.avg_acc
            << " forgetting=" << record.forgetting << " wall_ms=" << record.wall_ms << "\n";
  std::cout << "records: " << paths.records << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& lambda_list,
              const std::string& alpha_list, const std::string& seed_list,
              const std::string& out_dir) {
  const cflsim::RunConfig base = cflsim::load_config(config_path);
  cflsim::SweepGrids grids;
  grids.lambdas = parse_double_list(lambda_list, "--lambda");
  grids.alpha_dirs = parse_double_list(alpha_list, "--alpha-dir");
  grids.seeds = parse_seed_list(seed_list);

  const auto results = cflsim::sweep(base, grids, cflsim::resolve_threads());
  const cflsim::ResultPaths paths = cflsim::write_sweep_results(results, out_dir, base);

  int ok = 0, failed = 0;
  for (const auto& r : results) {
    if (r.record) {
      ++ok;
    } else {
      ++failed;
      std::cerr << "cell lambda=" << r.lambda << " alpha_dir=" << r.alpha_dir
                << " seed=" << r.seed << " failed: " << r.error << "\n";
    }
  }
  std::cout << ok << " runs ok, " << failed << " failed\n";
  std::cout << "records: " << paths.records << "\n";
  return failed == 0 ? 0 : 1;
}

int cmd_report(const std::string& in_dir, const std::string& format) {
  namespace fs = std::filesystem;
  std::vector<cflsim::MetricsRecord> records;
  if (!fs::is_directory(in_dir)) throw cflsim::IoError(in_dir + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    const auto loaded = cflsim::load_records(file.string());
    records.insert(records.end(), loaded.begin(), loaded.end());
  }
  if (records.empty()) throw cflsim::DataError("no records found under " + in_dir);

  const auto groups = cflsim::aggregate_records(records);
  if (format == "csv") {
    std::cout << cflsim::render_report_csv(groups);
  } else if (format == "md") {
    std::cout << cflsim::render_report_md(groups);
  } else {
    throw cflsim::ConfigError("--format must be csv or md");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual federated learning simulator"};
  app.set_version_flag("--version", cflsim::kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir = "results";
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> algo_override;

  auto* run = app.add_subcommand("run", "run one experiment from a config file");
  run->add_option("--config", config_path, "config JSON path")->required();
  run->add_option("--seed", seed_override, "override the config seed");
  run->add_option("--algo", algo_override, "override the algorithm");
  run->add_option("--out", out_dir, "output directory (default: results)");

  std::string lambda_list, alpha_list, seed_list;
  auto* sweep = app.add_subcommand("sweep", "cross-product sweep over lambda/alpha_dir/seeds");
  sweep->add_option("--config", config_path, "base config JSON path")->required();
  sweep->add_option("--lambda", lambda_list, "comma list of lambda values")->required();
  sweep->add_option("--alpha-dir", alpha_list, "comma list of alpha_dir values")->required();
  sweep->add_option("--seeds", seed_list, "comma list of seeds; a..b ranges allowed")->required();
  sweep->add_option("--out", out_dir, "output directory (default: results)");

  std::string in_dir, format = "csv";
  auto* report = app.add_subcommand("report", "aggregate records into mean+-std tables");
  report->add_option("--in", in_dir, "directory holding records.jsonl files")->required();
  report->add_option("--format", format, "csv or md (default: csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, seed_override, algo_override, out_dir);
    if (sweep->parsed()) return cmd_sweep(config_path, lambda_list, alpha_list, seed_list, out_dir);
    if (report->parsed()) return cmd_report(in_dir, format);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
