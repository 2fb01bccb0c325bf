#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fedsim/algorithms.hpp"
#include "fedsim/compressors.hpp"
#include "fedsim/data.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/objectives.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct QuadraticProblemSpec {
  std::int64_t clients = 2;
  std::int64_t dim = 1;
  double heterogeneity = 1.0;
  double sigma = 0.0;
};

struct DatasetProblemSpec {
  std::string train_images, train_labels;
  std::string test_images, test_labels;  // optional
  std::int64_t clients = 200;
  std::int64_t shards_per_client = 2;
  std::vector<std::int64_t> hidden = {256, 128};
};

enum class CompressorKind {
  Identity,
  RandomSparsify,
  RandomDither,
  TopR,
  GroupedSign,
};

// Declarative compressor description; materialized once the model dimension
// is known (grouped sign needs it to build the partition).
struct CompressorConfig {
  CompressorKind kind = CompressorKind::Identity;
  std::int64_t kept_coords = 1;   // random_sparsify s
  int bits = 1;                   // random_dither b
  double kept_fraction = 0.05;    // top_r r
  std::int64_t groups = 1;        // grouped_sign: M contiguous groups
  bool scaled = false;            // wrap an unbiased kind in 1/(1+omega)
};

inline CompressorSpec materialize(const CompressorConfig& cfg,
                                  std::int64_t dim) {
  CompressorSpec spec;
  switch (cfg.kind) {
    case CompressorKind::Identity:
      spec = Identity{};
      break;
    case CompressorKind::RandomSparsify:
      spec = RandomSparsify{cfg.kept_coords};
      break;
    case CompressorKind::RandomDither:
      spec = RandomDither{cfg.bits};
      break;
    case CompressorKind::TopR:
      spec = TopR{cfg.kept_fraction};
      break;
    case CompressorKind::GroupedSign: {
      if (cfg.groups < 1 || cfg.groups > dim)
        throw ConfigError("compressor.groups: must satisfy 1 <= M <= d");
      IndexPartition partition(static_cast<std::size_t>(cfg.groups));
      for (std::int64_t m = 0; m < cfg.groups; ++m) {
        const std::int64_t begin = m * dim / cfg.groups;
        const std::int64_t end = (m + 1) * dim / cfg.groups;
        for (std::int64_t k = begin; k < end; ++k)
          partition[static_cast<std::size_t>(m)].push_back(k);
      }
      spec = make_grouped_sign(std::move(partition));
      break;
    }
  }
  if (cfg.scaled) {
    if (!is_unbiased(spec))
      throw ConfigError("compressor.scaled: only unbiased kinds can be "
                        "scaled, got " + spec_name(spec));
    UnbiasedSpec inner;
    if (auto* rs = std::get_if<RandomSparsify>(&spec)) inner = *rs;
    else if (auto* rd = std::get_if<RandomDither>(&spec)) inner = *rd;
    else inner = Identity{};
    spec = ScaledUnbiased{inner};
  }
  return spec;
}

struct ExperimentConfig {
  std::variant<QuadraticProblemSpec, DatasetProblemSpec> problem =
      QuadraticProblemSpec{};
  AlgoKind algorithm = AlgoKind::ScaffoldSingle;
  CompressorConfig compressor;
  HyperParams hp;
  std::uint64_t seed = 0;
  std::int64_t eval_interval = 1;
  std::int64_t eval_subsample = 2048;  // 0 = full data (MLP only)
  int threads = 1;
  std::string output_path;

  std::string algo_label() const {
    return AlgorithmSpec{algorithm}.name();
  }
};

inline FederatedProblem build_problem(const ExperimentConfig& config) {
  if (const auto* quad = std::get_if<QuadraticProblemSpec>(&config.problem))
    return make_quadratic_problem(quad->clients, quad->dim,
                                  quad->heterogeneity, quad->sigma,
                                  config.seed);
  const auto& ds = std::get<DatasetProblemSpec>(config.problem);
  auto train = std::make_shared<const Dataset>(
      load_idx(ds.train_images, ds.train_labels));
  std::shared_ptr<const Dataset> test;
  if (!ds.test_images.empty())
    test = std::make_shared<const Dataset>(
        load_idx(ds.test_images, ds.test_labels));
  return make_mlp_problem(std::move(train), std::move(test), ds.clients,
                          ds.shards_per_client, ds.hidden, config.seed);
}

inline AlgorithmSpec build_algorithm(const ExperimentConfig& config,
                                     std::int64_t dim) {
  AlgorithmSpec algo;
  algo.kind = config.algorithm;
  algo.compressor = materialize(config.compressor, dim);
  return algo;
}

// ---------------------------------------------------------------------------
// Client sampling
// ---------------------------------------------------------------------------

// Uniform over all size-S subsets of [0, N): partial Fisher-Yates, take S,
// sort ascending. Consumes only the given (sampling-purpose) stream.
inline std::vector<std::int64_t> sample_clients(std::int64_t num_clients,
                                                std::int64_t sample_size,
                                                RngStream& rng) {
  if (sample_size < 1 || sample_size > num_clients)
    throw ConfigError("sample_clients: must satisfy 1 <= S <= N");
  return detail::sample_without_replacement(sample_size, num_clients, rng);
}

// ---------------------------------------------------------------------------
// Round records and trajectories
// ---------------------------------------------------------------------------

struct RoundRecord {
  std::int64_t round = 0;
  double grad_norm_sq = 0.0;
  double train_loss = 0.0;
  std::optional<double> test_accuracy;
  std::uint64_t uplink_bytes_cum = 0;
  std::uint64_t downlink_bytes_cum = 0;
  std::vector<std::int64_t> participants;
  double max_increment_norm = 0.0;
  bool diverged = false;
};

struct Trajectory {
  ExperimentConfig config;
  std::vector<RoundRecord> records;
  ServerState final_state;
  bool diverged = false;
};

namespace detail {

// Evaluation subsampling gets its own stream, keyed away from client ids.
inline RngStream eval_stream(std::uint64_t seed, std::uint64_t round) {
  return RngStream(seed, round, std::uint64_t{1} << 40,
                   StreamPurpose::Sampling);
}

}  // namespace detail

// Theory mode: clamp eta_l by the recipe bound eta_l <= eta_l_kl_max/(K L).
// Needs the problem constants L and Delta, so quadratics only.
inline double theory_eta_l_cap(const FederatedProblem& problem,
                               const AlgorithmSpec& algo,
                               const HyperParams& hp) {
  if (!problem.lipschitz || !problem.initial_gap)
    throw ConfigError(
        "hyperparams.theory_mode: needs a problem with known L and Delta");
  const double l = *problem.lipschitz;
  double eta_l_kl_max = 0.0;
  if (algo.kind == AlgoKind::Scallion || algo.kind == AlgoKind::ScaffoldSingle) {
    eta_l_kl_max =
        scallion_theory_params(l, *problem.initial_gap, problem.sigma,
                               problem.num_clients(), hp.sampled_clients,
                               hp.local_steps, std::max<std::int64_t>(hp.rounds, 1),
                               omega(algo.compressor, problem.dim))
            .eta_l_kl_max;
  } else if (algo.kind == AlgoKind::Scafcom) {
    eta_l_kl_max =
        scafcom_theory_params(l, *problem.initial_gap, problem.sigma,
                              problem.num_clients(), hp.sampled_clients,
                              hp.local_steps, std::max<std::int64_t>(hp.rounds, 1),
                              std::sqrt(contraction_q2(algo.compressor,
                                                       problem.dim)))
            .eta_l_kl_max;
  } else {
    throw ConfigError(
        "hyperparams.theory_mode: only scallion, scafcom, or scaffold");
  }
  return eta_l_kl_max / (static_cast<double>(hp.local_steps) * l);
}

inline Trajectory run_experiment(const ExperimentConfig& config) {
  FederatedProblem problem = build_problem(config);
  AlgorithmSpec algo = build_algorithm(config, problem.dim);
  algo.validate(config.hp, problem.num_clients(), problem.dim);
  if (config.eval_interval < 1)
    throw ConfigError("output.eval_interval: must be >= 1");

  Trajectory traj;
  traj.config = config;
  if (config.hp.theory_mode)
    traj.config.hp.eta_l =
        std::min(config.hp.eta_l, theory_eta_l_cap(problem, algo, config.hp));
  const HyperParams& hp = traj.config.hp;
  ServerState server = init_server(problem, config.seed);
  std::vector<ClientState> states = init_states(
      problem, algo, hp.control_init_batch, &server.x, config.seed);
  if (hp.control_init_batch > 0)
    server = init_server(problem, config.seed, &states);

  std::uint64_t uplink_cum = 0, downlink_cum = 0;

  const auto record_eval = [&](std::int64_t round, const UplinkReport* report) {
    RoundRecord rec;
    rec.round = round;
    auto rng = detail::eval_stream(config.seed,
                                   static_cast<std::uint64_t>(round));
    const EvalResult eval =
        evaluate(problem, server.x, config.eval_subsample, rng);
    rec.grad_norm_sq = eval.grad_norm_sq;
    rec.train_loss = eval.train_loss;
    rec.test_accuracy = eval.test_accuracy;
    rec.uplink_bytes_cum = uplink_cum;
    rec.downlink_bytes_cum = downlink_cum;
    if (report) {
      rec.participants = report->participants;
      rec.max_increment_norm = report->max_increment_norm;
    }
    traj.records.push_back(std::move(rec));
  };

  record_eval(0, nullptr);
  for (std::int64_t t = 0; t < hp.rounds; ++t) {
    RngStream sampling(config.seed, static_cast<std::uint64_t>(t), 0,
                       StreamPurpose::Sampling);
    const auto participants =
        sample_clients(problem.num_clients(), hp.sampled_clients, sampling);
    UplinkReport report;
    try {
      report = run_round(problem, algo, hp, server, states, participants,
                         config.seed, config.threads);
    } catch (const DivergenceError&) {
      RoundRecord rec;
      rec.round = t + 1;
      rec.diverged = true;
      rec.uplink_bytes_cum = uplink_cum;
      rec.downlink_bytes_cum = downlink_cum;
      rec.participants = participants;
      traj.records.push_back(std::move(rec));
      traj.diverged = true;
      break;
    }
    uplink_cum += report.uplink_bytes;
    downlink_cum += report.downlink_bytes;

    if (!all_finite(server.x)) {
      RoundRecord rec;
      rec.round = t + 1;
      rec.diverged = true;
      rec.uplink_bytes_cum = uplink_cum;
      rec.downlink_bytes_cum = downlink_cum;
      rec.participants = report.participants;
      traj.records.push_back(std::move(rec));
      traj.diverged = true;
      break;
    }
    if ((t + 1) % config.eval_interval == 0 || t + 1 == hp.rounds)
      record_eval(t + 1, &report);
  }
  traj.final_state = std::move(server);
  return traj;
}

// ---------------------------------------------------------------------------
// Comparison of runs
// ---------------------------------------------------------------------------

struct ComparisonTable {
  std::vector<std::string> labels;          // one per config
  std::vector<Trajectory> trajectories;     // aligned with labels
};

inline ComparisonTable compare_runs(
    const std::vector<ExperimentConfig>& configs) {
  if (configs.empty()) throw ConfigError("compare_runs: no configs");
  for (const auto& cfg : configs) {
    if (cfg.hp.rounds != configs.front().hp.rounds ||
        cfg.eval_interval != configs.front().eval_interval)
      throw ConfigError(
          "compare_runs: configs must share rounds and eval_interval");
  }
  ComparisonTable table;
  for (std::size_t j = 0; j < configs.size(); ++j) {
    table.labels.push_back(configs[j].algo_label() + "_" + std::to_string(j));
    table.trajectories.push_back(run_experiment(configs[j]));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Learning-rate grid search
// ---------------------------------------------------------------------------

struct GridCell {
  double eta_g = 0.0;
  double eta_l = 0.0;
  double metric = 0.0;  // final test accuracy, or final grad norm squared
  bool diverged = false;
};

struct GridSearchResult {
  ExperimentConfig best;
  GridCell best_cell;
  std::vector<GridCell> table;
};

// Runs every (eta_g, eta_l) pair. Selection: highest final test accuracy
// (dataset problems) or lowest final squared gradient norm (quadratics);
// divergent cells are flagged and never selected; ties break toward the
// smaller eta_g, then the smaller eta_l.
inline GridSearchResult grid_search(const ExperimentConfig& base,
                                    const std::vector<double>& eta_g_grid,
                                    const std::vector<double>& eta_l_grid) {
  if (eta_g_grid.empty() || eta_l_grid.empty())
    throw ConfigError("grid_search: empty grid");
  const bool maximize =
      std::holds_alternative<DatasetProblemSpec>(base.problem);

  GridSearchResult result;
  bool have_best = false;
  for (double eta_g : eta_g_grid) {
    for (double eta_l : eta_l_grid) {
      ExperimentConfig cfg = base;
      cfg.hp.eta_g = eta_g;
      cfg.hp.eta_l = eta_l;
      cfg.output_path.clear();
      const Trajectory traj = run_experiment(cfg);
      GridCell cell{eta_g, eta_l, 0.0, traj.diverged};
      if (!traj.diverged && !traj.records.empty()) {
        const RoundRecord& final_rec = traj.records.back();
        cell.metric = maximize ? final_rec.test_accuracy.value_or(0.0)
                               : final_rec.grad_norm_sq;
      }
      result.table.push_back(cell);
      if (cell.diverged) continue;
      const bool better =
          !have_best ||
          (maximize ? cell.metric > result.best_cell.metric
                    : cell.metric < result.best_cell.metric) ||
          (cell.metric == result.best_cell.metric &&
           (cell.eta_g < result.best_cell.eta_g ||
            (cell.eta_g == result.best_cell.eta_g &&
             cell.eta_l < result.best_cell.eta_l)));
      if (better) {
        have_best = true;
        result.best = cfg;
        result.best_cell = cell;
      }
    }
  }
  if (!have_best)
    throw DivergenceError("grid_search: every grid cell diverged");
  return result;
}

}  // namespace fedsim
