#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/mlp.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace detail {

inline std::uint32_t read_be32(std::istream& is, const std::string& path) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (!is) throw IngestionError(path + ": truncated header");
  return (std::uint32_t{buf[0]} << 24) | (std::uint32_t{buf[1]} << 16) |
         (std::uint32_t{buf[2]} << 8) | std::uint32_t{buf[3]};
}

inline void write_be32(std::ostream& os, std::uint32_t v) {
  const unsigned char buf[4] = {
      static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace detail

// IDX ingestion (big-endian magic + dimension words + raw bytes).
// Pixel bytes are scaled to [0,1] by dividing by 255.
inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw IngestionError(images_path + ": cannot open");
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw IngestionError(labels_path + ": cannot open");

  const std::uint32_t image_magic = detail::read_be32(images, images_path);
  if (image_magic != 0x00000803u)
    throw IngestionError(images_path + ": bad images magic");
  const std::uint32_t label_magic = detail::read_be32(labels, labels_path);
  if (label_magic != 0x00000801u)
    throw IngestionError(labels_path + ": bad labels magic");

  const std::uint32_t image_count = detail::read_be32(images, images_path);
  const std::uint32_t rows = detail::read_be32(images, images_path);
  const std::uint32_t cols = detail::read_be32(images, images_path);
  const std::uint32_t label_count = detail::read_be32(labels, labels_path);
  if (image_count != label_count)
    throw IngestionError(images_path + ": image count " +
                         std::to_string(image_count) + " != label count " +
                         std::to_string(label_count));

  Dataset data;
  data.feature_dim = static_cast<std::int64_t>(rows) * cols;
  const std::size_t pixel_count =
      static_cast<std::size_t>(image_count) *
      static_cast<std::size_t>(data.feature_dim);
  std::vector<unsigned char> raw(pixel_count);
  images.read(reinterpret_cast<char*>(raw.data()),
              static_cast<std::streamsize>(pixel_count));
  if (!images) throw IngestionError(images_path + ": truncated pixel data");

  data.features.resize(pixel_count);
  for (std::size_t k = 0; k < pixel_count; ++k)
    data.features[k] = static_cast<float>(raw[k]) / 255.0f;

  std::vector<unsigned char> raw_labels(label_count);
  labels.read(reinterpret_cast<char*>(raw_labels.data()),
              static_cast<std::streamsize>(label_count));
  if (!labels) throw IngestionError(labels_path + ": truncated label data");

  data.labels.resize(label_count);
  std::int32_t max_label = 0;
  for (std::size_t k = 0; k < raw_labels.size(); ++k) {
    data.labels[k] = static_cast<std::int32_t>(raw_labels[k]);
    max_label = std::max(max_label, data.labels[k]);
  }
  data.num_classes = std::max<std::int64_t>(10, max_label + 1);
  return data;
}

// Writes a dataset back out in the same IDX layout (pixels quantized to
// bytes). Used to produce fixtures and bundled demo datasets.
inline void write_idx(const Dataset& data, std::int64_t rows,
                      std::int64_t cols, const std::string& images_path,
                      const std::string& labels_path) {
  if (rows * cols != data.feature_dim)
    throw ConfigError("write_idx: rows*cols != feature_dim");
  std::ofstream images(images_path, std::ios::binary);
  detail::write_be32(images, 0x00000803u);
  detail::write_be32(images, static_cast<std::uint32_t>(data.size()));
  detail::write_be32(images, static_cast<std::uint32_t>(rows));
  detail::write_be32(images, static_cast<std::uint32_t>(cols));
  std::vector<unsigned char> raw(data.features.size());
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const float scaled = data.features[k] * 255.0f + 0.5f;
    raw[k] = static_cast<unsigned char>(
        std::clamp(scaled, 0.0f, 255.0f));
  }
  images.write(reinterpret_cast<const char*>(raw.data()),
               static_cast<std::streamsize>(raw.size()));

  std::ofstream labels(labels_path, std::ios::binary);
  detail::write_be32(labels, 0x00000801u);
  detail::write_be32(labels, static_cast<std::uint32_t>(data.size()));
  std::vector<unsigned char> raw_labels(data.labels.size());
  for (std::size_t k = 0; k < raw_labels.size(); ++k)
    raw_labels[k] = static_cast<unsigned char>(data.labels[k]);
  labels.write(reinterpret_cast<const char*>(raw_labels.data()),
               static_cast<std::streamsize>(raw_labels.size()));
}

// Non-iid label-shard partition: indices sorted by label, cut into
// N * shards_per_client contiguous single-class shards (last shard absorbs
// any remainder), shard order shuffled, each client takes shards_per_client
// consecutive shards.
inline std::vector<std::vector<std::int64_t>> shard_partition(
    const std::vector<std::int32_t>& labels, std::int64_t num_clients,
    std::int64_t shards_per_client, RngStream& rng) {
  const auto n = static_cast<std::int64_t>(labels.size());
  const std::int64_t total_shards = num_clients * shards_per_client;
  if (num_clients < 1 || shards_per_client < 1)
    throw ConfigError("shard_partition: clients and shards must be >= 1");
  if (total_shards > n)
    throw ConfigError("shard_partition: more shards (" +
                      std::to_string(total_shards) + ") than samples (" +
                      std::to_string(n) + ")");

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int64_t a, std::int64_t b) {
                     return labels[static_cast<std::size_t>(a)] <
                            labels[static_cast<std::size_t>(b)];
                   });

  const std::int64_t shard_size = n / total_shards;
  std::vector<std::int64_t> shard_order(
      static_cast<std::size_t>(total_shards));
  std::iota(shard_order.begin(), shard_order.end(), std::int64_t{0});
  for (std::int64_t k = 0; k + 1 < total_shards; ++k) {
    const auto j = k + static_cast<std::int64_t>(rng.uniform_below(
                           static_cast<std::uint64_t>(total_shards - k)));
    std::swap(shard_order[static_cast<std::size_t>(k)],
              shard_order[static_cast<std::size_t>(j)]);
  }

  std::vector<std::vector<std::int64_t>> assignment(
      static_cast<std::size_t>(num_clients));
  for (std::int64_t client = 0; client < num_clients; ++client) {
    auto& mine = assignment[static_cast<std::size_t>(client)];
    for (std::int64_t s = 0; s < shards_per_client; ++s) {
      const std::int64_t shard =
          shard_order[static_cast<std::size_t>(client * shards_per_client + s)];
      const std::int64_t begin = shard * shard_size;
      const std::int64_t end =
          (shard + 1 == total_shards) ? n : begin + shard_size;
      for (std::int64_t k = begin; k < end; ++k)
        mine.push_back(order[static_cast<std::size_t>(k)]);
    }
  }
  return assignment;
}

// Deterministic synthetic image classification set: one random prototype
// image per class, samples are noisy copies. Stands in for MNIST-style data
// where the real files are not available.
inline Dataset make_prototype_images(std::int64_t num_samples,
                                     std::int64_t feature_dim,
                                     std::int64_t num_classes,
                                     double noise_std, std::uint64_t seed) {
  RngStream rng(seed, 0, 0, StreamPurpose::Partition);
  std::vector<float> prototypes(
      static_cast<std::size_t>(num_classes * feature_dim));
  for (float& p : prototypes) p = static_cast<float>(rng.uniform());

  Dataset data;
  data.feature_dim = feature_dim;
  data.num_classes = num_classes;
  data.features.resize(static_cast<std::size_t>(num_samples * feature_dim));
  data.labels.resize(static_cast<std::size_t>(num_samples));
  for (std::int64_t i = 0; i < num_samples; ++i) {
    const auto label = static_cast<std::int32_t>(i % num_classes);
    data.labels[static_cast<std::size_t>(i)] = label;
    const float* proto = prototypes.data() + label * feature_dim;
    float* row = data.features.data() + i * feature_dim;
    for (std::int64_t k = 0; k < feature_dim; ++k) {
      const double v = proto[k] + noise_std * rng.normal();
      row[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return data;
}

}  // namespace fedsim
