#pragma once

#include <cctype>
#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/harness.hpp"

namespace fedsim {

// Sectioned key-value configuration files:
//
//   [problem]
//   kind = quadratic
//   clients = 20
//   ...
//
// Parsing is strict: unknown sections or keys are hard errors, so a config
// describes exactly one reproducible experiment.

using ConfigMap = std::map<std::string, std::string>;  // "section.key" -> value

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t begin = 0, end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin])))
    ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1])))
    --end;
  return s.substr(begin, end - begin);
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class ConfigReader {
 public:
  explicit ConfigReader(ConfigMap map) : map_(std::move(map)) {}

  bool has(const std::string& key) const { return map_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = map_.find(key);
    if (it == map_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) {
    auto it = map_.find(key);
    if (it == map_.end()) return fallback;
    consumed_.insert(key);
    std::int64_t value = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw ConfigError(key + ": expected integer, got '" + s + "'");
    return value;
  }

  double get_double(const std::string& key, double fallback) {
    auto it = map_.find(key);
    if (it == map_.end()) return fallback;
    consumed_.insert(key);
    try {
      std::size_t pos = 0;
      const double value = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return value;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected number, got '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    auto it = map_.find(key);
    if (it == map_.end()) return fallback;
    consumed_.insert(key);
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + it->second + "'");
  }

  std::vector<std::int64_t> get_int_list(const std::string& key,
                                         std::vector<std::int64_t> fallback) {
    auto it = map_.find(key);
    if (it == map_.end()) return fallback;
    consumed_.insert(key);
    std::vector<std::int64_t> values;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      std::int64_t v = 0;
      auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc{} || ptr != item.data() + item.size())
        throw ConfigError(key + ": expected integer list, got '" + it->second +
                          "'");
      values.push_back(v);
    }
    if (values.empty())
      throw ConfigError(key + ": empty list");
    return values;
  }

  void reject_unconsumed() const {
    for (const auto& [key, value] : map_)
      if (!consumed_.count(key))
        throw ConfigError(key + ": unknown key");
  }

  void forbid(const std::string& key, const std::string& reason) const {
    if (map_.count(key)) throw ConfigError(key + ": " + reason);
  }

 private:
  ConfigMap map_;
  std::set<std::string> consumed_;
};

}  // namespace detail

inline ConfigMap parse_config_text(std::istream& is) {
  ConfigMap map;
  std::string line, section;
  std::int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line.erase(comment);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(line_no) +
                          ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key = value");
    if (section.empty())
      throw ConfigError("line " + std::to_string(line_no) +
                        ": key outside any [section]");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const std::string full = section + "." + key;
    if (map.count(full))
      throw ConfigError(full + ": duplicate key");
    map[full] = value;
  }
  return map;
}

inline ExperimentConfig config_from_map(const ConfigMap& raw) {
  detail::ConfigReader reader(raw);
  ExperimentConfig config;

  const std::string kind = reader.get_string("problem.kind", "quadratic");
  if (kind == "quadratic") {
    QuadraticProblemSpec quad;
    quad.clients = reader.get_int("problem.clients", quad.clients);
    quad.dim = reader.get_int("problem.dim", quad.dim);
    quad.heterogeneity =
        reader.get_double("problem.heterogeneity", quad.heterogeneity);
    quad.sigma = reader.get_double("problem.sigma", quad.sigma);
    if (quad.clients < 1) throw ConfigError("problem.clients: must be >= 1");
    if (quad.dim < 1) throw ConfigError("problem.dim: must be >= 1");
    config.problem = quad;
    config.hp.sampled_clients = std::min<std::int64_t>(20, quad.clients);
  } else if (kind == "mlp") {
    DatasetProblemSpec ds;
    ds.train_images = reader.get_string("problem.train_images", "");
    ds.train_labels = reader.get_string("problem.train_labels", "");
    ds.test_images = reader.get_string("problem.test_images", "");
    ds.test_labels = reader.get_string("problem.test_labels", "");
    ds.clients = reader.get_int("problem.clients", ds.clients);
    ds.shards_per_client =
        reader.get_int("problem.shards_per_client", ds.shards_per_client);
    ds.hidden = reader.get_int_list("problem.hidden", ds.hidden);
    if (ds.train_images.empty() || ds.train_labels.empty())
      throw ConfigError("problem.train_images: required for kind = mlp");
    config.problem = ds;
    config.hp.sampled_clients = std::min<std::int64_t>(20, ds.clients);
  } else {
    throw ConfigError("problem.kind: unknown kind '" + kind + "'");
  }
  config.seed =
      static_cast<std::uint64_t>(reader.get_int("problem.seed", 0));

  const std::string algo_name =
      reader.get_string("algorithm.name", "scaffold");
  if (algo_name == "fedavg") config.algorithm = AlgoKind::FedAvg;
  else if (algo_name == "scaffold_original")
    config.algorithm = AlgoKind::ScaffoldOriginal;
  else if (algo_name == "scaffold") config.algorithm = AlgoKind::ScaffoldSingle;
  else if (algo_name == "scallion") config.algorithm = AlgoKind::Scallion;
  else if (algo_name == "scafcom") config.algorithm = AlgoKind::Scafcom;
  else throw ConfigError("algorithm.name: unknown algorithm '" + algo_name + "'");

  if (config.algorithm == AlgoKind::Scallion) {
    reader.forbid("algorithm.beta", "beta is meaningless for scallion");
    config.hp.alpha = reader.get_double("algorithm.alpha", 1.0);
  } else if (config.algorithm == AlgoKind::Scafcom) {
    reader.forbid("algorithm.alpha", "alpha is meaningless for scafcom");
    config.hp.beta = reader.get_double("algorithm.beta", 1.0);
  } else {
    reader.forbid("algorithm.alpha",
                  "alpha applies to scallion only");
    reader.forbid("algorithm.beta", "beta applies to scafcom only");
  }

  const bool allows_compressor = config.algorithm == AlgoKind::Scallion ||
                                 config.algorithm == AlgoKind::Scafcom;
  const std::string comp_kind =
      reader.get_string("compressor.kind", "identity");
  if (!allows_compressor && comp_kind != "identity")
    throw ConfigError("compressor.kind: " + algo_name +
                      " is full-precision only");
  if (comp_kind == "identity") config.compressor.kind = CompressorKind::Identity;
  else if (comp_kind == "random_sparsify")
    config.compressor.kind = CompressorKind::RandomSparsify;
  else if (comp_kind == "random_dither")
    config.compressor.kind = CompressorKind::RandomDither;
  else if (comp_kind == "top_r") config.compressor.kind = CompressorKind::TopR;
  else if (comp_kind == "grouped_sign")
    config.compressor.kind = CompressorKind::GroupedSign;
  else throw ConfigError("compressor.kind: unknown kind '" + comp_kind + "'");
  config.compressor.kept_coords =
      reader.get_int("compressor.s", config.compressor.kept_coords);
  config.compressor.bits = static_cast<int>(
      reader.get_int("compressor.bits", config.compressor.bits));
  config.compressor.kept_fraction =
      reader.get_double("compressor.r", config.compressor.kept_fraction);
  config.compressor.groups =
      reader.get_int("compressor.groups", config.compressor.groups);
  config.compressor.scaled =
      reader.get_bool("compressor.scaled", config.compressor.scaled);

  config.hp.eta_l = reader.get_double("hyperparams.eta_l", config.hp.eta_l);
  config.hp.eta_g = reader.get_double("hyperparams.eta_g", config.hp.eta_g);
  config.hp.local_steps =
      reader.get_int("hyperparams.local_steps", config.hp.local_steps);
  config.hp.sampled_clients = reader.get_int("hyperparams.sampled_clients",
                                             config.hp.sampled_clients);
  config.hp.rounds = reader.get_int("hyperparams.rounds", 100);
  config.hp.batch_size =
      reader.get_int("hyperparams.batch_size", config.hp.batch_size);
  config.hp.control_init_batch = reader.get_int(
      "hyperparams.control_init_batch", config.hp.control_init_batch);
  config.hp.theory_mode =
      reader.get_bool("hyperparams.theory_mode", config.hp.theory_mode);

  config.output_path = reader.get_string("output.path", "");
  config.eval_interval =
      reader.get_int("output.eval_interval", config.eval_interval);
  config.eval_subsample =
      reader.get_int("output.eval_subsample", config.eval_subsample);
  config.threads =
      static_cast<int>(reader.get_int("output.threads", config.threads));

  reader.reject_unconsumed();

  // Structural constraints checked eagerly so errors name the key.
  std::int64_t num_clients = 0;
  if (const auto* quad = std::get_if<QuadraticProblemSpec>(&config.problem))
    num_clients = quad->clients;
  else
    num_clients = std::get<DatasetProblemSpec>(config.problem).clients;
  config.hp.validate(num_clients);
  if (config.eval_interval < 1)
    throw ConfigError("output.eval_interval: must be >= 1");
  return config;
}

inline ExperimentConfig parse_config(std::istream& is) {
  return config_from_map(parse_config_text(is));
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError(path + ": cannot open config file");
  return parse_config(is);
}

// Fully resolved view of a config (all defaults applied); re-parsing this map
// reproduces the run bitwise.
inline ConfigMap config_to_map(const ExperimentConfig& config) {
  using detail::format_double;
  ConfigMap map;
  if (const auto* quad = std::get_if<QuadraticProblemSpec>(&config.problem)) {
    map["problem.kind"] = "quadratic";
    map["problem.clients"] = std::to_string(quad->clients);
    map["problem.dim"] = std::to_string(quad->dim);
    map["problem.heterogeneity"] = format_double(quad->heterogeneity);
    map["problem.sigma"] = format_double(quad->sigma);
  } else {
    const auto& ds = std::get<DatasetProblemSpec>(config.problem);
    map["problem.kind"] = "mlp";
    map["problem.train_images"] = ds.train_images;
    map["problem.train_labels"] = ds.train_labels;
    if (!ds.test_images.empty()) {
      map["problem.test_images"] = ds.test_images;
      map["problem.test_labels"] = ds.test_labels;
    }
    map["problem.clients"] = std::to_string(ds.clients);
    map["problem.shards_per_client"] = std::to_string(ds.shards_per_client);
    std::string hidden;
    for (std::size_t j = 0; j < ds.hidden.size(); ++j) {
      if (j) hidden += ",";
      hidden += std::to_string(ds.hidden[j]);
    }
    map["problem.hidden"] = hidden;
  }
  map["problem.seed"] = std::to_string(config.seed);

  const AlgorithmSpec algo{config.algorithm};
  map["algorithm.name"] = algo.name();
  if (config.algorithm == AlgoKind::Scallion)
    map["algorithm.alpha"] = format_double(config.hp.alpha);
  if (config.algorithm == AlgoKind::Scafcom)
    map["algorithm.beta"] = format_double(config.hp.beta);

  switch (config.compressor.kind) {
    case CompressorKind::Identity:
      map["compressor.kind"] = "identity";
      break;
    case CompressorKind::RandomSparsify:
      map["compressor.kind"] = "random_sparsify";
      map["compressor.s"] = std::to_string(config.compressor.kept_coords);
      break;
    case CompressorKind::RandomDither:
      map["compressor.kind"] = "random_dither";
      map["compressor.bits"] = std::to_string(config.compressor.bits);
      break;
    case CompressorKind::TopR:
      map["compressor.kind"] = "top_r";
      map["compressor.r"] = format_double(config.compressor.kept_fraction);
      break;
    case CompressorKind::GroupedSign:
      map["compressor.kind"] = "grouped_sign";
      map["compressor.groups"] = std::to_string(config.compressor.groups);
      break;
  }
  if (config.compressor.scaled) map["compressor.scaled"] = "true";

  map["hyperparams.eta_l"] = format_double(config.hp.eta_l);
  map["hyperparams.eta_g"] = format_double(config.hp.eta_g);
  map["hyperparams.local_steps"] = std::to_string(config.hp.local_steps);
  map["hyperparams.sampled_clients"] =
      std::to_string(config.hp.sampled_clients);
  map["hyperparams.rounds"] = std::to_string(config.hp.rounds);
  map["hyperparams.batch_size"] = std::to_string(config.hp.batch_size);
  if (config.hp.control_init_batch > 0)
    map["hyperparams.control_init_batch"] =
        std::to_string(config.hp.control_init_batch);
  if (config.hp.theory_mode) map["hyperparams.theory_mode"] = "true";

  if (!config.output_path.empty()) map["output.path"] = config.output_path;
  map["output.eval_interval"] = std::to_string(config.eval_interval);
  map["output.eval_subsample"] = std::to_string(config.eval_subsample);
  // threads deliberately omitted: execution layout never changes results.
  return map;
}

// ---------------------------------------------------------------------------
// Trajectory CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kTrajectoryHeader =
    "round,algo,grad_norm_sq,train_loss,test_acc,uplink_bytes_cum,"
    "downlink_bytes_cum,seed";

inline void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
  for (const auto& [key, value] : config_to_map(traj.config))
    os << "# " << key << " = " << value << "\n";
  if (traj.diverged) os << "# diverged = true\n";
  os << kTrajectoryHeader << "\n";
  const std::string algo = traj.config.algo_label();
  char buf[256];
  for (const RoundRecord& rec : traj.records) {
    std::string acc;
    if (rec.test_accuracy) {
      std::snprintf(buf, sizeof(buf), "%.17g", *rec.test_accuracy);
      acc = buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "%" PRId64 ",%s,%.17g,%.17g,%s,%" PRIu64 ",%" PRIu64
                  ",%" PRIu64,
                  rec.round, algo.c_str(), rec.grad_norm_sq, rec.train_loss,
                  acc.c_str(), rec.uplink_bytes_cum, rec.downlink_bytes_cum,
                  traj.config.seed);
    os << buf << "\n";
  }
}

inline void write_trajectory_csv(const Trajectory& traj,
                                 const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError(path + ": cannot open for writing");
  write_trajectory_csv(traj, os);
}

// Re-parses the provenance echo at the top of a trajectory CSV.
inline ExperimentConfig config_from_csv_echo(std::istream& is) {
  ConfigMap map;
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("# ", 0) != 0) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = detail::trim(line.substr(2, eq - 2));
    if (key == "diverged") continue;
    map[key] = detail::trim(line.substr(eq + 1));
  }
  return config_from_map(map);
}

inline void write_comparison_csv(const ComparisonTable& table,
                                 std::ostream& os) {
  os << "round";
  for (const auto& label : table.labels)
    os << "," << label << "_grad_norm_sq"
       << "," << label << "_train_loss"
       << "," << label << "_test_acc"
       << "," << label << "_uplink_bytes_cum"
       << "," << label << "_downlink_bytes_cum";
  os << "\n";
  std::size_t num_rows = 0;
  for (const auto& traj : table.trajectories)
    num_rows = std::max(num_rows, traj.records.size());
  char buf[128];
  for (std::size_t row = 0; row < num_rows; ++row) {
    bool wrote_round = false;
    std::string line;
    for (const auto& traj : table.trajectories) {
      if (row >= traj.records.size()) {
        line += ",,,,,";
        continue;
      }
      const RoundRecord& rec = traj.records[row];
      if (!wrote_round) {
        std::snprintf(buf, sizeof(buf), "%" PRId64, rec.round);
        line.insert(0, buf);
        wrote_round = true;
      }
      std::string acc;
      if (rec.test_accuracy) {
        std::snprintf(buf, sizeof(buf), "%.17g", *rec.test_accuracy);
        acc = buf;
      }
      std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%s,%" PRIu64 ",%" PRIu64,
                    rec.grad_norm_sq, rec.train_loss, acc.c_str(),
                    rec.uplink_bytes_cum, rec.downlink_bytes_cum);
      line += buf;
    }
    os << line << "\n";
  }
}

}  // namespace fedsim
