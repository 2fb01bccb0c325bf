#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "fedsim/data.hpp"

using namespace fedsim;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("fedsim_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

void write_bytes(const std::string& path, const std::vector<unsigned char>& b) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()),
           static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("crafted 2-image idx fixture recovers exact pixels") {
  TempDir dir;
  // Two 2x2 images: pixels 0,51,102,153 and 204,255,0,255.
  write_bytes(dir.file("img"),
              {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
               0, 51, 102, 153, 204, 255, 0, 255});
  write_bytes(dir.file("lbl"), {0, 0, 8, 1, 0, 0, 0, 2, 7, 3});

  const Dataset data = load_idx(dir.file("img"), dir.file("lbl"));
  CHECK(data.size() == 2);
  CHECK(data.feature_dim == 4);
  CHECK(data.labels == std::vector<std::int32_t>{7, 3});
  CHECK(data.features[0] == 0.0f);
  CHECK(data.features[1] == 51.0f / 255.0f);
  CHECK(data.features[3] == 153.0f / 255.0f);
  CHECK(data.features[5] == 1.0f);
  CHECK(data.num_classes == 10);
}

TEST_CASE("idx ingestion errors") {
  TempDir dir;
  write_bytes(dir.file("img"), {0, 0, 8, 1, 0, 0, 0, 1});  // labels magic
  write_bytes(dir.file("lbl"), {0, 0, 8, 1, 0, 0, 0, 1, 5});
  CHECK_THROWS_AS(load_idx(dir.file("img"), dir.file("lbl")), IngestionError);

  write_bytes(dir.file("img2"),
              {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 9, 9});
  write_bytes(dir.file("lbl2"), {0, 0, 8, 1, 0, 0, 0, 1, 5});
  CHECK_THROWS_AS(load_idx(dir.file("img2"), dir.file("lbl2")),
                  IngestionError);  // count mismatch

  write_bytes(dir.file("img3"),
              {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
  write_bytes(dir.file("lbl3"), {0, 0, 8, 1, 0, 0, 0, 2, 5, 5});
  CHECK_THROWS_AS(load_idx(dir.file("img3"), dir.file("lbl3")),
                  IngestionError);  // truncated pixels

  CHECK_THROWS_AS(load_idx(dir.file("missing"), dir.file("lbl3")),
                  IngestionError);
}

TEST_CASE("write_idx / load_idx round trip") {
  TempDir dir;
  const Dataset original = make_prototype_images(60, 16, 10, 0.2, 5);
  write_idx(original, 4, 4, dir.file("img"), dir.file("lbl"));
  const Dataset loaded = load_idx(dir.file("img"), dir.file("lbl"));
  REQUIRE(loaded.size() == 60);
  CHECK(loaded.labels == original.labels);
  for (std::size_t k = 0; k < original.features.size(); ++k)
    CHECK(std::fabs(loaded.features[k] - original.features[k]) <=
          0.5f / 255.0f + 1e-6f);
}

TEST_CASE("shard partition, 12-sample hand enumeration") {
  // Labels 0 x6, 1 x6; N=2, 2 shards each -> 4 shards of 3 samples.
  const std::vector<std::int32_t> labels = {0, 1, 0, 1, 0, 1,
                                            0, 1, 0, 1, 0, 1};
  RngStream rng(3, 0, 0, StreamPurpose::Partition);
  const auto assignment = shard_partition(labels, 2, 2, rng);
  REQUIRE(assignment.size() == 2);
  std::set<std::int64_t> all;
  for (const auto& mine : assignment) {
    CHECK(mine.size() == 6);
    // Each shard of size 3 is single-class: check per 3-element run.
    for (std::size_t s = 0; s < mine.size(); s += 3) {
      const auto first = labels[static_cast<std::size_t>(mine[s])];
      CHECK(labels[static_cast<std::size_t>(mine[s + 1])] == first);
      CHECK(labels[static_cast<std::size_t>(mine[s + 2])] == first);
    }
    all.insert(mine.begin(), mine.end());
  }
  CHECK(all.size() == 12);
}

TEST_CASE("shard partition covers everything and respects class purity") {
  const Dataset data = make_prototype_images(1000, 8, 10, 0.1, 7);
  RngStream rng(7, 0, 0, StreamPurpose::Partition);
  const auto assignment = shard_partition(data.labels, 50, 2, rng);
  REQUIRE(assignment.size() == 50);
  std::set<std::int64_t> all;
  for (const auto& mine : assignment) {
    std::set<std::int32_t> classes;
    for (std::int64_t idx : mine)
      classes.insert(data.labels[static_cast<std::size_t>(idx)]);
    CHECK(classes.size() <= 2);
    all.insert(mine.begin(), mine.end());
  }
  CHECK(all.size() == 1000);
}

TEST_CASE("last shard absorbs the remainder") {
  // 13 samples, 4 shards -> sizes 3,3,3,4; union must still cover all.
  std::vector<std::int32_t> labels(13, 0);
  RngStream rng(9, 0, 0, StreamPurpose::Partition);
  const auto assignment = shard_partition(labels, 2, 2, rng);
  std::size_t total = 0;
  for (const auto& mine : assignment) total += mine.size();
  CHECK(total == 13);
}

TEST_CASE("degenerate single-client partition") {
  std::vector<std::int32_t> labels = {1, 0, 1, 0};
  RngStream rng(1, 0, 0, StreamPurpose::Partition);
  const auto assignment = shard_partition(labels, 1, 1, rng);
  REQUIRE(assignment.size() == 1);
  CHECK(assignment[0].size() == 4);
}

TEST_CASE("partition is deterministic in the seed") {
  const Dataset data = make_prototype_images(200, 4, 10, 0.1, 11);
  RngStream a(11, 0, 0, StreamPurpose::Partition);
  RngStream b(11, 0, 0, StreamPurpose::Partition);
  CHECK(shard_partition(data.labels, 10, 2, a) ==
        shard_partition(data.labels, 10, 2, b));
}

TEST_CASE("partition rejects too many shards") {
  std::vector<std::int32_t> labels(5, 0);
  RngStream rng(0, 0, 0, StreamPurpose::Partition);
  CHECK_THROWS_AS(shard_partition(labels, 3, 2, rng), ConfigError);
  CHECK_THROWS_AS(shard_partition(labels, 0, 1, rng), ConfigError);
}

TEST_CASE("prototype image generator") {
  const Dataset data = make_prototype_images(50, 12, 10, 0.1, 21);
  CHECK(data.size() == 50);
  CHECK(data.feature_dim == 12);
  for (std::int64_t i = 0; i < data.size(); ++i)
    CHECK(data.labels[static_cast<std::size_t>(i)] == i % 10);
  for (float v : data.features) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  const Dataset again = make_prototype_images(50, 12, 10, 0.1, 21);
  CHECK(again.features == data.features);
}
