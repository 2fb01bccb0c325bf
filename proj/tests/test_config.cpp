#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <string>

#include "fedsim/config.hpp"

using namespace fedsim;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

const std::string kMinimal =
    "[problem]\n"
    "kind = quadratic\n"
    "clients = 30\n"
    "dim = 8\n"
    "seed = 5\n";

}  // namespace

TEST_CASE("minimal config resolves the documented defaults") {
  const auto config = parse(kMinimal);
  CHECK(config.hp.local_steps == 10);
  CHECK(config.hp.batch_size == 32);
  CHECK(config.hp.sampled_clients == 20);  // min(20, N)
  CHECK(config.seed == 5);
  CHECK(config.algorithm == AlgoKind::ScaffoldSingle);
  CHECK(config.compressor.kind == CompressorKind::Identity);
  CHECK(config.eval_interval == 1);
  CHECK(config.eval_subsample == 2048);

  const auto small = parse(
      "[problem]\nkind = quadratic\nclients = 7\ndim = 2\n");
  CHECK(small.hp.sampled_clients == 7);  // min(20, N) with N < 20

  const auto map = config_to_map(config);
  CHECK(map.at("hyperparams.local_steps") == "10");
  CHECK(map.at("hyperparams.batch_size") == "32");
  CHECK(map.at("hyperparams.sampled_clients") == "20");
}

TEST_CASE("rejections name the offending key") {
  auto expect_error = [](const std::string& extra, const std::string& key) {
    try {
      parse(kMinimal + extra);
      FAIL("expected ConfigError for " << key);
    } catch (const ConfigError& e) {
      INFO(e.what());
      CHECK(std::string(e.what()).find(key) != std::string::npos);
    }
  };
  expect_error("[algorithm]\nname = scallion\nalpha = 1.5\n",
               "algorithm.alpha");
  expect_error("[algorithm]\nname = scallion\nbeta = 0.5\n",
               "algorithm.beta");
  expect_error("[algorithm]\nname = scafcom\nalpha = 0.5\n",
               "algorithm.alpha");
  expect_error("[algorithm]\nname = scaffold\nalpha = 0.5\n",
               "algorithm.alpha");
  expect_error("[algorithm]\nname = nonsense\n", "algorithm.name");
  expect_error("[hyperparams]\nsampled_clients = 31\n",
               "hyperparams.sampled_clients");
  expect_error("[hyperparams]\nwarmup = 5\n", "hyperparams.warmup");
  expect_error("[compressor]\nkind = top_r\n", "compressor.kind");
  expect_error("[hyperparams]\nrounds = ten\n", "hyperparams.rounds");
  expect_error("[output]\neval_interval = 0\n", "output.eval_interval");
}

TEST_CASE("scallion takes an unbiased compressor and alpha") {
  const auto config = parse(kMinimal +
                            "[algorithm]\n"
                            "name = scallion\n"
                            "alpha = 0.25\n"
                            "[compressor]\n"
                            "kind = random_dither\n"
                            "bits = 4\n");
  CHECK(config.algorithm == AlgoKind::Scallion);
  CHECK(config.hp.alpha == 0.25);
  CHECK(config.compressor.kind == CompressorKind::RandomDither);
  CHECK(config.compressor.bits == 4);
}

TEST_CASE("scafcom takes a contractive compressor and beta") {
  const auto config = parse(kMinimal +
                            "[algorithm]\n"
                            "name = scafcom\n"
                            "beta = 0.9\n"
                            "[compressor]\n"
                            "kind = random_sparsify\n"
                            "s = 3\n"
                            "scaled = true\n");
  CHECK(config.algorithm == AlgoKind::Scafcom);
  CHECK(config.hp.beta == 0.9);
  CHECK(config.compressor.scaled);
  const auto spec = materialize(config.compressor, 8);
  CHECK(has_contraction(spec));
}

TEST_CASE("parser syntax errors") {
  CHECK_THROWS_AS(parse("key = 1\n"), ConfigError);          // outside section
  CHECK_THROWS_AS(parse("[problem\nkind = quadratic\n"), ConfigError);
  CHECK_THROWS_AS(parse("[problem]\nkind quadratic\n"), ConfigError);
  CHECK_THROWS_AS(parse("[problem]\ndim = 4\ndim = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse("[problem]\nkind = mlp\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_file("/nonexistent/x.cfg"), IngestionError);
}

TEST_CASE("comments and whitespace are tolerated") {
  const auto config = parse(
      "# leading comment\n"
      "[problem]\n"
      "  kind = quadratic   # trailing comment\n"
      "\n"
      "  clients=4\n"
      "dim =  3\n");
  const auto& quad = std::get<QuadraticProblemSpec>(config.problem);
  CHECK(quad.clients == 4);
  CHECK(quad.dim == 3);
}

TEST_CASE("config map round trip is stable") {
  const auto config = parse(kMinimal +
                            "[algorithm]\n"
                            "name = scallion\n"
                            "alpha = 0.125\n"
                            "[compressor]\n"
                            "kind = random_sparsify\n"
                            "s = 2\n"
                            "[hyperparams]\n"
                            "eta_l = 0.037\n"
                            "eta_g = 1.25\n"
                            "rounds = 17\n"
                            "[output]\n"
                            "eval_interval = 3\n");
  const auto map = config_to_map(config);
  const auto reparsed = config_from_map(map);
  CHECK(config_to_map(reparsed) == map);
  CHECK(reparsed.hp.eta_l == config.hp.eta_l);
  CHECK(reparsed.hp.rounds == 17);
  CHECK(reparsed.eval_interval == 3);
}

TEST_CASE("trajectory CSV: exact header and provenance echo round trip") {
  auto config = parse(kMinimal +
                      "[hyperparams]\n"
                      "eta_l = 0.02\n"
                      "rounds = 6\n"
                      "sampled_clients = 4\n");
  const auto traj = run_experiment(config);
  std::ostringstream os;
  write_trajectory_csv(traj, os);
  const std::string csv = os.str();
  CHECK(csv.find("round,algo,grad_norm_sq,train_loss,test_acc,"
                 "uplink_bytes_cum,downlink_bytes_cum,seed\n") !=
        std::string::npos);
  // Quadratic problems have no test set: the test_acc field is empty.
  CHECK(csv.find(",,") != std::string::npos);

  std::istringstream is(csv);
  const auto echoed = config_from_csv_echo(is);
  std::ostringstream os2;
  write_trajectory_csv(run_experiment(echoed), os2);
  CHECK(os2.str() == csv);
}

TEST_CASE("mlp config round trips through the echo") {
  std::istringstream is(
      "[problem]\n"
      "kind = mlp\n"
      "train_images = /data/imgs\n"
      "train_labels = /data/lbls\n"
      "clients = 50\n"
      "shards_per_client = 2\n"
      "hidden = 256, 128\n"
      "seed = 9\n");
  const auto config = parse_config(is);
  const auto& ds = std::get<DatasetProblemSpec>(config.problem);
  CHECK(ds.hidden == std::vector<std::int64_t>{256, 128});
  CHECK(ds.clients == 50);
  CHECK(config.hp.sampled_clients == 20);
  const auto map = config_to_map(config);
  CHECK(map.at("problem.hidden") == "256,128");
  CHECK(config_to_map(config_from_map(map)) == map);
}

TEST_CASE("comparison CSV has one column group per run") {
  auto config = parse(kMinimal +
                      "[hyperparams]\n"
                      "eta_l = 0.02\n"
                      "rounds = 4\n"
                      "sampled_clients = 4\n");
  const auto table = compare_runs({config, config});
  std::ostringstream os;
  write_comparison_csv(table, os);
  const std::string csv = os.str();
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header.rfind("round,", 0) == 0);
  CHECK(header.find("_0_grad_norm_sq") != std::string::npos);
  CHECK(header.find("_1_uplink_bytes_cum") != std::string::npos);
  std::size_t rows = 0;
  std::string line;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == table.trajectories[0].records.size());
}
