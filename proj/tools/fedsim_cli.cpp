// Command-line front end for the federated compression simulator.
//
// Exit codes: 0 success, 2 configuration error, 3 ingestion error,
// 4 divergence, 5 failed compressor validation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/config.hpp"
#include "fedsim/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIngestion = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitValidation = 5;

std::string output_dir() {
  if (const char* dir = std::getenv("FEDSIM_OUTPUT_DIR")) return dir;
  return ".";
}

// Relative output paths land in $FEDSIM_OUTPUT_DIR (default: cwd).
std::string resolve_output(const std::string& path) {
  if (path.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(output_dir()) / path).string();
}

std::string default_run_output(const std::string& config_path) {
  const auto stem = std::filesystem::path(config_path).stem().string();
  return (std::filesystem::path(output_dir()) / (stem + ".csv")).string();
}

int cmd_run(const std::string& config_path, int threads) {
  fedsim::ExperimentConfig config = fedsim::parse_config_file(config_path);
  if (threads > 0) config.threads = threads;
  const std::string out = config.output_path.empty()
                              ? default_run_output(config_path)
                              : resolve_output(config.output_path);
  const fedsim::Trajectory traj = fedsim::run_experiment(config);
  fedsim::write_trajectory_csv(traj, out);
  std::cout << "wrote " << out << " (" << traj.records.size() << " rows)\n";
  if (traj.diverged) {
    std::cerr << "run diverged at round " << traj.records.back().round << "\n";
    return kExitDivergence;
  }
  const auto& last = traj.records.back();
  std::printf("final: round=%lld grad_norm_sq=%.6g train_loss=%.6g",
              static_cast<long long>(last.round), last.grad_norm_sq,
              last.train_loss);
  if (last.test_accuracy) std::printf(" test_acc=%.4f", *last.test_accuracy);
  std::printf(" uplink_bytes=%llu\n",
              static_cast<unsigned long long>(last.uplink_bytes_cum));
  return 0;
}

int cmd_compare(const std::vector<std::string>& config_paths,
                const std::string& out_path) {
  std::vector<fedsim::ExperimentConfig> configs;
  for (const auto& path : config_paths)
    configs.push_back(fedsim::parse_config_file(path));
  const fedsim::ComparisonTable table = fedsim::compare_runs(configs);
  const std::string out = resolve_output(out_path);
  std::ofstream os(out, std::ios::binary);
  if (!os) throw fedsim::IngestionError(out + ": cannot open for writing");
  fedsim::write_comparison_csv(table, os);
  std::cout << "wrote " << out << "\n";
  for (const auto& traj : table.trajectories)
    if (traj.diverged) {
      std::cerr << "at least one compared run diverged\n";
      return kExitDivergence;
    }
  return 0;
}

int cmd_check_compressor(const std::string& kind, std::int64_t s, int bits,
                         double r, std::int64_t groups, bool scaled,
                         std::int64_t dim, std::int64_t trials,
                         std::uint64_t seed) {
  fedsim::CompressorConfig cfg;
  if (kind == "identity") cfg.kind = fedsim::CompressorKind::Identity;
  else if (kind == "random_sparsify") {
    cfg.kind = fedsim::CompressorKind::RandomSparsify;
    cfg.kept_coords = s;
  } else if (kind == "random_dither") {
    cfg.kind = fedsim::CompressorKind::RandomDither;
    cfg.bits = bits;
  } else if (kind == "top_r") {
    cfg.kind = fedsim::CompressorKind::TopR;
    cfg.kept_fraction = r;
  } else if (kind == "grouped_sign") {
    cfg.kind = fedsim::CompressorKind::GroupedSign;
    cfg.groups = groups;
  } else {
    throw fedsim::ConfigError("--kind: unknown compressor '" + kind + "'");
  }
  cfg.scaled = scaled;
  const fedsim::CompressorSpec spec = fedsim::materialize(cfg, dim);

  fedsim::RngStream rng(seed, 0, 0, fedsim::StreamPurpose::Compression);
  bool pass = true;
  std::printf("compressor: %s  d=%lld  trials=%lld\n",
              fedsim::spec_name(spec).c_str(), static_cast<long long>(dim),
              static_cast<long long>(trials));
  if (fedsim::is_unbiased(spec)) {
    const auto report = fedsim::validate_unbiased(spec, dim, trials, rng);
    std::printf("omega=%.6g\nmax_mean_error=%.6g (%s)\n"
                "variance_ratio=%.6g (bound %.6g, %s)\n",
                report.omega, report.max_mean_error,
                report.mean_ok ? "pass" : "FAIL", report.variance_ratio,
                report.omega, report.variance_ok ? "pass" : "FAIL");
    pass = report.pass();
  } else {
    const auto report = fedsim::validate_contractive(spec, dim, trials, rng);
    std::printf("q2=%.6g\nmax_ratio=%.6g\nmean_ratio=%.6g\ncontraction %s\n",
                report.q2, report.max_ratio, report.mean_ratio,
                report.pass() ? "pass" : "FAIL");
    pass = report.pass();
  }
  if (!pass) {
    std::cerr << "validation failed\n";
    return kExitValidation;
  }
  std::printf("pass\n");
  return 0;
}

int cmd_grid(const std::string& config_path, std::vector<double> eta_g,
             std::vector<double> eta_l, const std::string& out_path) {
  const fedsim::ExperimentConfig base = fedsim::parse_config_file(config_path);
  if (eta_g.empty())
    eta_g = {0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0};
  if (eta_l.empty()) eta_l = eta_g;
  const fedsim::GridSearchResult result =
      fedsim::grid_search(base, eta_g, eta_l);

  std::ostringstream table;
  table << "eta_g,eta_l,metric,diverged\n";
  char buf[128];
  for (const auto& cell : result.table) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%d\n", cell.eta_g,
                  cell.eta_l, cell.metric, cell.diverged ? 1 : 0);
    table << buf;
  }
  if (out_path.empty()) {
    std::cout << table.str();
  } else {
    const std::string out = resolve_output(out_path);
    std::ofstream os(out, std::ios::binary);
    if (!os) throw fedsim::IngestionError(out + ": cannot open for writing");
    os << table.str();
    std::cout << "wrote " << out << "\n";
  }
  std::printf("best: eta_g=%.17g eta_l=%.17g metric=%.17g\n",
              result.best_cell.eta_g, result.best_cell.eta_l,
              result.best_cell.metric);
  return 0;
}

int cmd_inspect(const std::string& trajectory_path) {
  std::ifstream is(trajectory_path, std::ios::binary);
  if (!is)
    throw fedsim::IngestionError(trajectory_path + ": cannot open");
  const fedsim::ExperimentConfig config = fedsim::config_from_csv_echo(is);
  for (const auto& [key, value] : fedsim::config_to_map(config))
    std::cout << key << " = " << value << "\n";

  is.clear();
  is.seekg(0);
  std::string line, last_data;
  std::int64_t rows = 0;
  bool diverged = false;
  while (std::getline(is, line)) {
    if (line.rfind("# diverged", 0) == 0) diverged = true;
    if (line.empty() || line.front() == '#' || line.front() == 'r') continue;
    last_data = line;
    ++rows;
  }
  std::printf("rows = %lld\n", static_cast<long long>(rows));
  if (diverged) std::printf("diverged = true\n");
  if (!last_data.empty()) std::printf("final = %s\n", last_data.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator for compressed federated learning"};
  app.require_subcommand(1);

  std::string run_config;
  int run_threads = 0;
  auto* run = app.add_subcommand("run", "Run one experiment config");
  run->add_option("-c,--config", run_config, "config file")->required();
  run->add_option("--threads", run_threads, "worker threads (overrides config)");

  std::vector<std::string> cmp_configs;
  std::string cmp_out;
  auto* cmp = app.add_subcommand("compare", "Run several configs side by side");
  cmp->add_option("-c,--config", cmp_configs, "config files")->required();
  cmp->add_option("-o,--output", cmp_out, "comparison CSV path")->required();

  std::string cc_kind;
  std::int64_t cc_s = 1, cc_groups = 1, cc_dim = 0, cc_trials = 10000;
  int cc_bits = 1;
  double cc_r = 0.05;
  std::uint64_t cc_seed = 0;
  bool cc_scaled = false;
  auto* cc = app.add_subcommand("check-compressor",
                                "Validate a compressor's statistical contract");
  cc->add_option("--kind", cc_kind, "compressor kind")->required();
  cc->add_option("--s", cc_s, "kept coordinates (random_sparsify)");
  cc->add_option("--bits", cc_bits, "bit width (random_dither)");
  cc->add_option("--r", cc_r, "kept fraction (top_r)");
  cc->add_option("--groups", cc_groups, "group count (grouped_sign)");
  cc->add_flag("--scaled", cc_scaled, "wrap unbiased kind in 1/(1+omega)");
  cc->add_option("--dim", cc_dim, "vector dimension")->required();
  cc->add_option("--trials", cc_trials, "Monte Carlo trials");
  cc->add_option("--seed", cc_seed, "rng seed");

  std::string grid_config, grid_out;
  std::vector<double> grid_eta_g, grid_eta_l;
  auto* grid = app.add_subcommand("grid", "Learning-rate grid search");
  grid->add_option("-c,--config", grid_config, "base config")->required();
  grid->add_option("--eta-g", grid_eta_g, "global rate grid");
  grid->add_option("--eta-l", grid_eta_l, "local rate grid");
  grid->add_option("-o,--output", grid_out, "grid table CSV path");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Summarize a trajectory CSV");
  inspect->add_option("path", inspect_path, "trajectory CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_config, run_threads);
    if (*cmp) return cmd_compare(cmp_configs, cmp_out);
    if (*cc)
      return cmd_check_compressor(cc_kind, cc_s, cc_bits, cc_r, cc_groups,
                                  cc_scaled, cc_dim, cc_trials, cc_seed);
    if (*grid) return cmd_grid(grid_config, grid_eta_g, grid_eta_l, grid_out);
    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const fedsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fedsim::IngestionError& e) {
    std::cerr << "ingestion error: " << e.what() << "\n";
    return kExitIngestion;
  } catch (const fedsim::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  }
  return kExitConfig;
}
