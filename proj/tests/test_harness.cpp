#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/harness.hpp"

using namespace fedsim;

namespace {

ExperimentConfig quadratic_config() {
  ExperimentConfig config;
  QuadraticProblemSpec quad;
  quad.clients = 20;
  quad.dim = 10;
  quad.heterogeneity = 5.0;
  quad.sigma = 0.0;
  config.problem = quad;
  config.algorithm = AlgoKind::ScaffoldSingle;
  config.hp.eta_l = 0.02;
  config.hp.eta_g = 1.0;
  config.hp.local_steps = 10;
  config.hp.sampled_clients = 4;
  config.hp.rounds = 50;
  config.hp.batch_size = 1;
  config.seed = 7;
  return config;
}

std::string csv_of(const Trajectory& traj) {
  std::ostringstream os;
  write_trajectory_csv(traj, os);
  return os.str();
}

}  // namespace

TEST_CASE("sample_clients: full participation returns the identity") {
  RngStream rng(1, 0, 0, StreamPurpose::Sampling);
  const auto all = sample_clients(6, 6, rng);
  CHECK(all == std::vector<std::int64_t>{0, 1, 2, 3, 4, 5});
  CHECK_THROWS_AS(sample_clients(6, 7, rng), ConfigError);
  CHECK_THROWS_AS(sample_clients(6, 0, rng), ConfigError);
}

TEST_CASE("sample_clients: sorted, distinct, deterministic") {
  RngStream a(2, 9, 0, StreamPurpose::Sampling);
  RngStream b(2, 9, 0, StreamPurpose::Sampling);
  const auto sa = sample_clients(100, 10, a);
  const auto sb = sample_clients(100, 10, b);
  CHECK(sa == sb);
  CHECK(std::is_sorted(sa.begin(), sa.end()));
  for (std::size_t k = 1; k < sa.size(); ++k) CHECK(sa[k] != sa[k - 1]);
}

TEST_CASE("sample_clients: participation frequency concentrates") {
  const std::int64_t n = 200, s = 20, rounds = 10000;
  std::vector<int> counts(static_cast<std::size_t>(n), 0);
  for (std::int64_t t = 0; t < rounds; ++t) {
    RngStream rng(3, static_cast<std::uint64_t>(t), 0,
                  StreamPurpose::Sampling);
    for (std::int64_t i : sample_clients(n, s, rng))
      counts[static_cast<std::size_t>(i)]++;
  }
  for (int c : counts)
    CHECK(std::fabs(c / static_cast<double>(rounds) - 0.10) <= 0.015);
}

TEST_CASE("T=0 yields only the round-0 evaluation") {
  auto config = quadratic_config();
  config.hp.rounds = 0;
  const auto traj = run_experiment(config);
  REQUIRE(traj.records.size() == 1);
  CHECK(traj.records[0].round == 0);
  CHECK(traj.records[0].uplink_bytes_cum == 0);
}

TEST_CASE("quadratic scallion run converges to the optimum") {
  auto config = quadratic_config();
  config.algorithm = AlgoKind::Scallion;
  config.hp.rounds = 2000;
  config.eval_interval = 100;
  const auto traj = run_experiment(config);
  CHECK_FALSE(traj.diverged);
  CHECK(traj.records.back().grad_norm_sq <= 1e-10);
}

TEST_CASE("identical configs produce byte-identical CSV") {
  const auto config = quadratic_config();
  const std::string a = csv_of(run_experiment(config));
  const std::string b = csv_of(run_experiment(config));
  CHECK(a == b);
}

TEST_CASE("serial and threaded execution agree bitwise") {
  auto config = quadratic_config();
  config.hp.sampled_clients = 8;
  const std::string serial = csv_of(run_experiment(config));
  config.threads = 4;
  const std::string threaded = csv_of(run_experiment(config));
  CHECK(serial == threaded);
}

TEST_CASE("byte ledger matches the accounting formulas exactly") {
  auto config = quadratic_config();
  config.hp.rounds = 12;
  config.eval_interval = 1;
  const std::uint64_t dense = dense_bytes(10);

  config.algorithm = AlgoKind::ScaffoldSingle;
  auto traj = run_experiment(config);
  for (std::size_t r = 0; r < traj.records.size(); ++r) {
    const auto& rec = traj.records[r];
    CHECK(rec.uplink_bytes_cum ==
          static_cast<std::uint64_t>(rec.round) * 4 * dense);
    CHECK(rec.downlink_bytes_cum ==
          static_cast<std::uint64_t>(rec.round) * 4 * 2 * dense);
  }

  config.algorithm = AlgoKind::FedAvg;
  traj = run_experiment(config);
  CHECK(traj.records.back().uplink_bytes_cum == 12ull * 4 * dense);
  CHECK(traj.records.back().downlink_bytes_cum == 12ull * 4 * dense);

  // Sparse uplink: top-r with d=10, r=0.3 keeps 3 entries -> 4+24 bytes.
  config.algorithm = AlgoKind::Scafcom;
  config.compressor.kind = CompressorKind::TopR;
  config.compressor.kept_fraction = 0.3;
  traj = run_experiment(config);
  CHECK(traj.records.back().uplink_bytes_cum == 12ull * 4 * 28);
  CHECK(traj.records.back().downlink_bytes_cum == 12ull * 4 * 2 * dense);

  // Counters are nondecreasing.
  for (std::size_t r = 1; r < traj.records.size(); ++r) {
    CHECK(traj.records[r].uplink_bytes_cum >=
          traj.records[r - 1].uplink_bytes_cum);
    CHECK(traj.records[r].downlink_bytes_cum >=
          traj.records[r - 1].downlink_bytes_cum);
  }
}

TEST_CASE("divergence guard halts with a flagged record") {
  auto config = quadratic_config();
  config.hp.eta_l = 50.0;
  config.hp.eta_g = 50.0;
  config.hp.rounds = 5000;
  const auto traj = run_experiment(config);
  CHECK(traj.diverged);
  CHECK(traj.records.back().diverged);
  CHECK(traj.records.back().round < 5000);
  const std::string csv = csv_of(traj);
  CHECK(csv.find("# diverged = true") != std::string::npos);
}

TEST_CASE("compressed runs flag divergence instead of crashing") {
  // A non-finite payload would otherwise reach the quantizer mid-round.
  auto config = quadratic_config();
  config.algorithm = AlgoKind::Scallion;
  config.compressor.kind = CompressorKind::RandomDither;
  config.compressor.bits = 4;
  config.hp.eta_l = 80.0;
  config.hp.eta_g = 80.0;
  config.hp.rounds = 5000;
  const auto traj = run_experiment(config);
  CHECK(traj.diverged);
  CHECK(traj.records.back().diverged);
}

TEST_CASE("eval interval controls the row count") {
  auto config = quadratic_config();
  config.hp.rounds = 50;
  config.eval_interval = 7;
  const auto traj = run_experiment(config);
  // Rounds 0, 7, 14, ..., 49 is ceil stuff: 0 + 7 multiples (7..49) + final 50.
  REQUIRE(traj.records.size() == 9);
  CHECK(traj.records.back().round == 50);
  CHECK(traj.records[1].round == 7);
}

TEST_CASE("theory mode clamps the local rate") {
  auto config = quadratic_config();
  config.algorithm = AlgoKind::Scallion;
  config.hp.theory_mode = true;
  config.hp.eta_l = 10.0;
  config.hp.rounds = 1;
  const auto traj = run_experiment(config);
  CHECK(traj.config.hp.eta_l < 10.0);
  CHECK(traj.config.hp.eta_l > 0.0);

  // FedAvg has no recipe.
  auto bad = quadratic_config();
  bad.algorithm = AlgoKind::FedAvg;
  bad.hp.theory_mode = true;
  CHECK_THROWS_AS(run_experiment(bad), ConfigError);
}

TEST_CASE("control init batch changes round-0 controls, not the model") {
  auto config = quadratic_config();
  config.hp.rounds = 3;
  const auto zero_init = run_experiment(config);
  config.hp.control_init_batch = 4;
  const auto warm_init = run_experiment(config);
  CHECK(zero_init.records[0].train_loss == warm_init.records[0].train_loss);
  CHECK(zero_init.records.back().grad_norm_sq !=
        warm_init.records.back().grad_norm_sq);
}

TEST_CASE("compare_runs aligns identical configs") {
  const auto config = quadratic_config();
  const auto table = compare_runs({config, config});
  REQUIRE(table.trajectories.size() == 2);
  REQUIRE(table.labels.size() == 2);
  CHECK(table.labels[0] != table.labels[1]);
  REQUIRE(table.trajectories[0].records.size() ==
          table.trajectories[1].records.size());
  for (std::size_t r = 0; r < table.trajectories[0].records.size(); ++r) {
    CHECK(table.trajectories[0].records[r].grad_norm_sq ==
          table.trajectories[1].records[r].grad_norm_sq);
    CHECK(table.trajectories[0].records[r].uplink_bytes_cum ==
          table.trajectories[1].records[r].uplink_bytes_cum);
  }
}

TEST_CASE("compare_runs shows the 2:1 uplink ratio of the two formulations") {
  auto original = quadratic_config();
  original.algorithm = AlgoKind::ScaffoldOriginal;
  const auto single = quadratic_config();
  const auto table = compare_runs({original, single});
  for (std::size_t r = 1; r < table.trajectories[0].records.size(); ++r)
    CHECK(table.trajectories[0].records[r].uplink_bytes_cum ==
          2 * table.trajectories[1].records[r].uplink_bytes_cum);
}

TEST_CASE("compare_runs rejects mismatched schedules") {
  auto a = quadratic_config();
  auto b = quadratic_config();
  b.hp.rounds = 10;
  CHECK_THROWS_AS(compare_runs({a, b}), ConfigError);
  b = quadratic_config();
  b.eval_interval = 2;
  CHECK_THROWS_AS(compare_runs({a, b}), ConfigError);
  CHECK_THROWS_AS(compare_runs({}), ConfigError);
}

TEST_CASE("grid search on a 1x1 grid returns the single config") {
  auto config = quadratic_config();
  config.hp.rounds = 20;
  const auto result = grid_search(config, {0.5}, {0.03});
  CHECK(result.table.size() == 1);
  CHECK(result.best.hp.eta_g == 0.5);
  CHECK(result.best.hp.eta_l == 0.03);
}

TEST_CASE("grid search flags divergent cells and selects a finite one") {
  // d=1 quadratic, K=1, full participation: the run is plain GD with step
  // eta_g*eta_l; steps far above 2/L blow up.
  ExperimentConfig config;
  QuadraticProblemSpec quad;
  quad.clients = 2;
  quad.dim = 1;
  quad.heterogeneity = 1.0;
  quad.sigma = 0.0;
  config.problem = quad;
  config.algorithm = AlgoKind::ScaffoldSingle;
  config.hp.eta_l = 0.1;
  config.hp.eta_g = 1.0;
  config.hp.local_steps = 1;
  config.hp.sampled_clients = 2;
  config.hp.rounds = 600;
  config.hp.batch_size = 1;
  config.seed = 5;
  config.eval_interval = 600;

  const auto result = grid_search(config, {1.0, 40.0}, {0.1, 1.0});
  REQUIRE(result.table.size() == 4);
  int divergent = 0;
  for (const auto& cell : result.table) {
    if (cell.diverged) ++divergent;
  }
  CHECK(divergent >= 1);
  CHECK_FALSE(result.best_cell.diverged);
  CHECK(result.best_cell.metric <= 1e-10);

  // Every cell divergent -> divergence error.
  CHECK_THROWS_AS(grid_search(config, {400.0}, {1.0}), DivergenceError);
  CHECK_THROWS_AS(grid_search(config, {}, {0.1}), ConfigError);
}

TEST_CASE("grid search tie-break prefers the smaller rates") {
  // All cells converge to the exact optimum -> metric ties at ~0; the
  // reported best must be the smallest (eta_g, eta_l) pair among the tied.
  auto config = quadratic_config();
  config.hp.rounds = 4000;
  config.eval_interval = 4000;
  QuadraticProblemSpec quad = std::get<QuadraticProblemSpec>(config.problem);
  quad.clients = 2;
  quad.dim = 1;
  config.problem = quad;
  config.hp.sampled_clients = 2;
  const auto result = grid_search(config, {1.0, 1.5}, {0.05, 0.1});
  bool all_zero = true;
  for (const auto& cell : result.table)
    if (cell.metric != 0.0) all_zero = false;
  if (all_zero) {
    CHECK(result.best_cell.eta_g == 1.0);
    CHECK(result.best_cell.eta_l == 0.05);
  }
}
