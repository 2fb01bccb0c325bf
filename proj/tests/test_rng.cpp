#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "fedsim/rng.hpp"

using fedsim::RngStream;
using fedsim::StreamPurpose;

TEST_CASE("mix64 matches the published SplitMix64 sequence") {
  // First output of the reference SplitMix64 seeded with 0.
  CHECK(fedsim::mix64(0) == 0xe220a8397b1dcdafULL);
  CHECK(fedsim::mix64(fedsim::mix64(0)) != fedsim::mix64(0));
}

TEST_CASE("same key replays the same sequence") {
  RngStream a(42, 7, 3, StreamPurpose::Compression);
  RngStream b(42, 7, 3, StreamPurpose::Compression);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct key components give distinct streams") {
  RngStream base(1, 2, 3, StreamPurpose::Minibatch);
  std::vector<RngStream> others = {
      RngStream(2, 2, 3, StreamPurpose::Minibatch),
      RngStream(1, 3, 3, StreamPurpose::Minibatch),
      RngStream(1, 2, 4, StreamPurpose::Minibatch),
      RngStream(1, 2, 3, StreamPurpose::Compression),
  };
  const std::uint64_t first = base.next_u64();
  for (auto& other : others) CHECK(other.next_u64() != first);
}

TEST_CASE("uniform lies in [0,1)") {
  RngStream rng(9, 0, 0, StreamPurpose::Sampling);
  double min_seen = 1.0, max_seen = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    min_seen = std::min(min_seen, u);
    max_seen = std::max(max_seen, u);
  }
  CHECK(min_seen < 0.01);
  CHECK(max_seen > 0.99);
}

TEST_CASE("uniform_below stays in range and covers all residues") {
  RngStream rng(11, 0, 0, StreamPurpose::Sampling);
  CHECK(rng.uniform_below(1) == 0);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const std::uint64_t v = rng.uniform_below(7);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("uniform_below is close to uniform") {
  RngStream rng(13, 0, 0, StreamPurpose::Sampling);
  const int n = 10, trials = 100000;
  std::vector<int> counts(n, 0);
  for (int i = 0; i < trials; ++i)
    counts[static_cast<std::size_t>(rng.uniform_below(n))]++;
  // 5-sigma band around trials/n with binomial std.
  const double expected = static_cast<double>(trials) / n;
  const double sigma = std::sqrt(expected * (1.0 - 1.0 / n));
  for (int c : counts) CHECK(std::fabs(c - expected) < 5.0 * sigma);
}

TEST_CASE("normal has approximately zero mean and unit variance") {
  RngStream rng(17, 0, 0, StreamPurpose::InitNoise);
  const int trials = 200000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < trials; ++i) {
    const double z = rng.normal();
    sum += z;
    sum_sq += z * z;
  }
  const double mean = sum / trials;
  const double var = sum_sq / trials - mean * mean;
  CHECK(std::fabs(mean) < 5.0 / std::sqrt(static_cast<double>(trials)));
  CHECK(std::fabs(var - 1.0) < 0.02);
}
