#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/param_vector.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// ---------------------------------------------------------------------------
// Compressor specifications
// ---------------------------------------------------------------------------

struct Identity {};

// Keeps s of d coordinates uniformly at random, rescaled by d/s. Unbiased,
// omega = d/s - 1.
struct RandomSparsify {
  std::int64_t kept_coords;  // s
};

// Stochastic quantization of magnitudes onto a 2^b-level grid scaled by
// ||x||_2. Unbiased, omega = min(d/4^b, sqrt(d)/2^b).
struct RandomDither {
  int bits;  // b
};

// Keeps the ceil(r*d) coordinates of largest absolute value. Contractive,
// q^2 = 1 - ceil(r*d)/d.
struct TopR {
  double kept_fraction;  // r in (0, 1]
};

using IndexPartition = std::vector<std::vector<std::int64_t>>;

// Per-group L1 norm times ternary sign. Contractive,
// q^2 = 1 - 1/max group size.
struct GroupedSign {
  std::shared_ptr<const IndexPartition> groups;
};

inline GroupedSign make_grouped_sign(IndexPartition groups) {
  return GroupedSign{std::make_shared<const IndexPartition>(std::move(groups))};
}

using UnbiasedSpec = std::variant<Identity, RandomSparsify, RandomDither>;

// Unbiased compressor scaled by 1/(1+omega), which makes it
// q^2-contractive with q^2 = omega/(1+omega).
struct ScaledUnbiased {
  UnbiasedSpec inner;
};

using CompressorSpec = std::variant<Identity, RandomSparsify, RandomDither,
                                    TopR, GroupedSign, ScaledUnbiased>;

inline CompressorSpec widen(const UnbiasedSpec& spec) {
  return std::visit([](const auto& s) { return CompressorSpec{s}; }, spec);
}

inline bool is_unbiased(const CompressorSpec& spec) {
  return std::holds_alternative<Identity>(spec) ||
         std::holds_alternative<RandomSparsify>(spec) ||
         std::holds_alternative<RandomDither>(spec);
}

inline bool has_contraction(const CompressorSpec& spec) {
  return std::holds_alternative<Identity>(spec) ||
         std::holds_alternative<TopR>(spec) ||
         std::holds_alternative<GroupedSign>(spec) ||
         std::holds_alternative<ScaledUnbiased>(spec);
}

inline std::string spec_name(const CompressorSpec& spec) {
  struct Namer {
    std::string operator()(const Identity&) const { return "identity"; }
    std::string operator()(const RandomSparsify& s) const {
      return "random_sparsify(s=" + std::to_string(s.kept_coords) + ")";
    }
    std::string operator()(const RandomDither& s) const {
      return "random_dither(b=" + std::to_string(s.bits) + ")";
    }
    std::string operator()(const TopR& s) const {
      return "top_r(r=" + std::to_string(s.kept_fraction) + ")";
    }
    std::string operator()(const GroupedSign& s) const {
      return "grouped_sign(M=" +
             std::to_string(s.groups ? s.groups->size() : 0) + ")";
    }
    std::string operator()(const ScaledUnbiased& s) const {
      return "scaled(" + std::visit(Namer{}, widen(s.inner)) + ")";
    }
  };
  return std::visit(Namer{}, spec);
}

// ---------------------------------------------------------------------------
// Compressed messages
// ---------------------------------------------------------------------------

struct DenseMsg {
  std::int64_t dim;
  std::vector<double> values;
};

struct SparseMsg {
  std::int64_t dim;
  std::vector<std::int64_t> indices;  // strictly increasing
  std::vector<double> values;
};

struct DitheredMsg {
  std::int64_t dim;
  int bits;
  double norm;                      // scaled l2 norm of the input
  std::vector<std::int8_t> signs;   // per coordinate, in {-1, 0, +1}
  std::vector<std::int64_t> levels; // per coordinate, in [0, 2^bits]
};

struct GroupSignsMsg {
  std::int64_t dim;
  std::shared_ptr<const IndexPartition> groups;
  std::vector<double> group_l1;
  std::vector<std::int8_t> signs;
};

using CompressedMessage =
    std::variant<DenseMsg, SparseMsg, DitheredMsg, GroupSignsMsg>;

// ---------------------------------------------------------------------------
// omega / q^2
// ---------------------------------------------------------------------------

inline double omega(const CompressorSpec& spec, std::int64_t dim) {
  if (std::holds_alternative<Identity>(spec)) return 0.0;
  if (const auto* rs = std::get_if<RandomSparsify>(&spec)) {
    if (rs->kept_coords < 1)
      throw ConfigError("random_sparsify.s: must be >= 1");
    return static_cast<double>(dim) / static_cast<double>(rs->kept_coords) -
           1.0;
  }
  if (const auto* rd = std::get_if<RandomDither>(&spec)) {
    if (rd->bits < 1) throw ConfigError("random_dither.bits: must be >= 1");
    const double d = static_cast<double>(dim);
    const double two_b = std::ldexp(1.0, rd->bits);
    return std::min(d / (two_b * two_b), std::sqrt(d) / two_b);
  }
  throw ConfigError("omega: compressor " + spec_name(spec) +
                    " is not an unbiased variant");
}

inline double contraction_q2(const CompressorSpec& spec, std::int64_t dim) {
  if (std::holds_alternative<Identity>(spec)) return 0.0;
  if (const auto* tr = std::get_if<TopR>(&spec)) {
    if (!(tr->kept_fraction > 0.0) || tr->kept_fraction > 1.0)
      throw ConfigError("top_r.r: must be in (0, 1]");
    const auto kept = static_cast<std::int64_t>(
        std::ceil(tr->kept_fraction * static_cast<double>(dim)));
    return 1.0 - static_cast<double>(kept) / static_cast<double>(dim);
  }
  if (const auto* gs = std::get_if<GroupedSign>(&spec)) {
    if (!gs->groups || gs->groups->empty())
      throw ConfigError("grouped_sign.partition: empty partition");
    std::size_t max_size = 0;
    for (const auto& g : *gs->groups) max_size = std::max(max_size, g.size());
    if (max_size == 0)
      throw ConfigError("grouped_sign.partition: empty group");
    return 1.0 - 1.0 / static_cast<double>(max_size);
  }
  if (const auto* su = std::get_if<ScaledUnbiased>(&spec)) {
    const double w = omega(widen(su->inner), dim);
    return w / (1.0 + w);
  }
  throw ConfigError("contraction_q2: compressor " + spec_name(spec) +
                    " has no contraction factor without scaling");
}

// ---------------------------------------------------------------------------
// compress / decode
// ---------------------------------------------------------------------------

namespace detail {

inline std::int8_t ternary_sign(double x) {
  if (x > 0.0) return 1;
  if (x < 0.0) return -1;
  return 0;
}

// Partial Fisher-Yates: first s entries of a shuffled identity permutation.
inline std::vector<std::int64_t> sample_without_replacement(std::int64_t count,
                                                            std::int64_t total,
                                                            RngStream& rng) {
  std::vector<std::int64_t> pool(static_cast<std::size_t>(total));
  std::iota(pool.begin(), pool.end(), std::int64_t{0});
  for (std::int64_t k = 0; k < count; ++k) {
    const auto j =
        k + static_cast<std::int64_t>(rng.uniform_below(
                static_cast<std::uint64_t>(total - k)));
    std::swap(pool[static_cast<std::size_t>(k)],
              pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline void validate_partition(const IndexPartition& groups,
                               std::int64_t dim) {
  std::vector<char> seen(static_cast<std::size_t>(dim), 0);
  std::int64_t covered = 0;
  for (const auto& g : groups) {
    if (g.empty()) throw ConfigError("grouped_sign.partition: empty group");
    for (std::int64_t idx : g) {
      if (idx < 0 || idx >= dim)
        throw ConfigError("grouped_sign.partition: index out of range");
      if (seen[static_cast<std::size_t>(idx)])
        throw ConfigError("grouped_sign.partition: overlapping groups");
      seen[static_cast<std::size_t>(idx)] = 1;
      ++covered;
    }
  }
  if (covered != dim)
    throw ConfigError("grouped_sign.partition: does not cover all coordinates");
}

struct Compress {
  const ParamVector& x;
  RngStream& rng;

  CompressedMessage operator()(const Identity&) const {
    return DenseMsg{static_cast<std::int64_t>(x.size()), x};
  }

  CompressedMessage operator()(const RandomSparsify& spec) const {
    const auto dim = static_cast<std::int64_t>(x.size());
    if (spec.kept_coords < 1 || spec.kept_coords > dim)
      throw ConfigError("random_sparsify.s: must satisfy 1 <= s <= d (got s=" +
                        std::to_string(spec.kept_coords) +
                        ", d=" + std::to_string(dim) + ")");
    auto indices = sample_without_replacement(spec.kept_coords, dim, rng);
    const double scale = static_cast<double>(dim) /
                         static_cast<double>(spec.kept_coords);
    std::vector<double> values;
    values.reserve(indices.size());
    for (std::int64_t idx : indices)
      values.push_back(scale * x[static_cast<std::size_t>(idx)]);
    return SparseMsg{dim, std::move(indices), std::move(values)};
  }

  CompressedMessage operator()(const RandomDither& spec) const {
    const auto dim = static_cast<std::int64_t>(x.size());
    if (spec.bits < 1) throw ConfigError("random_dither.bits: must be >= 1");
    DitheredMsg msg{dim, spec.bits, 0.0,
                    std::vector<std::int8_t>(x.size(), 0),
                    std::vector<std::int64_t>(x.size(), 0)};
    const double norm = l2_norm(x);
    if (norm == 0.0) return msg;  // all-zero input, all-zero message
    msg.norm = norm;
    const double two_b = std::ldexp(1.0, spec.bits);
    for (std::size_t k = 0; k < x.size(); ++k) {
      msg.signs[k] = ternary_sign(x[k]);
      // |x_k|/norm can land an ulp above 1 when one coordinate dominates;
      // without the clamp ceil() would step past the top grid level.
      const double scaled = std::min(two_b, two_b * std::fabs(x[k]) / norm);
      const double floor_level = std::floor(scaled);
      const double prob_floor = std::ceil(scaled) - scaled;
      msg.levels[k] = static_cast<std::int64_t>(
          rng.uniform() < prob_floor ? floor_level : std::ceil(scaled));
    }
    return msg;
  }

  CompressedMessage operator()(const TopR& spec) const {
    const auto dim = static_cast<std::int64_t>(x.size());
    if (!(spec.kept_fraction > 0.0) || spec.kept_fraction > 1.0)
      throw ConfigError("top_r.r: must be in (0, 1] (got " +
                        std::to_string(spec.kept_fraction) + ")");
    const auto kept = static_cast<std::int64_t>(
        std::ceil(spec.kept_fraction * static_cast<double>(dim)));
    std::vector<std::int64_t> order(x.size());
    std::iota(order.begin(), order.end(), std::int64_t{0});
    // Ties in |value| broken by lower coordinate index.
    std::nth_element(order.begin(), order.begin() + (kept - 1), order.end(),
                     [&](std::int64_t a, std::int64_t b) {
                       const double fa = std::fabs(x[static_cast<std::size_t>(a)]);
                       const double fb = std::fabs(x[static_cast<std::size_t>(b)]);
                       if (fa != fb) return fa > fb;
                       return a < b;
                     });
    order.resize(static_cast<std::size_t>(kept));
    std::sort(order.begin(), order.end());
    std::vector<double> values;
    values.reserve(order.size());
    for (std::int64_t idx : order)
      values.push_back(x[static_cast<std::size_t>(idx)]);
    return SparseMsg{dim, std::move(order), std::move(values)};
  }

  CompressedMessage operator()(const GroupedSign& spec) const {
    const auto dim = static_cast<std::int64_t>(x.size());
    if (!spec.groups) throw ConfigError("grouped_sign.partition: missing");
    validate_partition(*spec.groups, dim);
    GroupSignsMsg msg{dim, spec.groups, {},
                      std::vector<std::int8_t>(x.size(), 0)};
    msg.group_l1.reserve(spec.groups->size());
    for (const auto& group : *spec.groups) {
      double l1 = 0.0;
      for (std::int64_t idx : group) {
        l1 += std::fabs(x[static_cast<std::size_t>(idx)]);
        msg.signs[static_cast<std::size_t>(idx)] =
            ternary_sign(x[static_cast<std::size_t>(idx)]);
      }
      msg.group_l1.push_back(l1);
    }
    return msg;
  }

  CompressedMessage operator()(const ScaledUnbiased& spec) const {
    const auto dim = static_cast<std::int64_t>(x.size());
    const double scale = 1.0 / (1.0 + omega(widen(spec.inner), dim));
    CompressedMessage msg = std::visit(Compress{x, rng}, widen(spec.inner));
    if (auto* dense = std::get_if<DenseMsg>(&msg)) {
      for (double& v : dense->values) v *= scale;
    } else if (auto* sparse = std::get_if<SparseMsg>(&msg)) {
      for (double& v : sparse->values) v *= scale;
    } else if (auto* dith = std::get_if<DitheredMsg>(&msg)) {
      dith->norm *= scale;
    }
    return msg;
  }
};

}  // namespace detail

inline CompressedMessage compress(const CompressorSpec& spec,
                                  const ParamVector& x, RngStream& rng) {
  return std::visit(detail::Compress{x, rng}, spec);
}

inline ParamVector decode(const CompressedMessage& msg) {
  struct Decode {
    ParamVector operator()(const DenseMsg& m) const {
      if (static_cast<std::int64_t>(m.values.size()) != m.dim)
        throw ConfigError("dense message: value count != dim");
      return m.values;
    }
    ParamVector operator()(const SparseMsg& m) const {
      if (m.indices.size() != m.values.size())
        throw ConfigError("sparse message: index/value count mismatch");
      ParamVector out(static_cast<std::size_t>(m.dim), 0.0);
      std::int64_t prev = -1;
      for (std::size_t k = 0; k < m.indices.size(); ++k) {
        const std::int64_t idx = m.indices[k];
        if (idx <= prev || idx >= m.dim)
          throw ConfigError(
              "sparse message: indices must be strictly increasing in [0, d)");
        prev = idx;
        out[static_cast<std::size_t>(idx)] = m.values[k];
      }
      return out;
    }
    ParamVector operator()(const DitheredMsg& m) const {
      if (m.signs.size() != static_cast<std::size_t>(m.dim) ||
          m.levels.size() != static_cast<std::size_t>(m.dim))
        throw ConfigError("dithered message: field size != dim");
      const std::int64_t max_level = std::int64_t{1} << m.bits;
      ParamVector out(static_cast<std::size_t>(m.dim), 0.0);
      const double inv_two_b = std::ldexp(1.0, -m.bits);
      for (std::size_t k = 0; k < out.size(); ++k) {
        if (m.levels[k] < 0 || m.levels[k] > max_level)
          throw ConfigError("dithered message: level out of [0, 2^b]");
        if (m.norm == 0.0 && (m.signs[k] != 0 || m.levels[k] != 0))
          throw ConfigError("dithered message: zero norm with nonzero payload");
        out[k] = m.norm * static_cast<double>(m.signs[k]) *
                 static_cast<double>(m.levels[k]) * inv_two_b;
      }
      return out;
    }
    ParamVector operator()(const GroupSignsMsg& m) const {
      if (!m.groups || m.group_l1.size() != m.groups->size())
        throw ConfigError("group-signs message: group/norm count mismatch");
      ParamVector out(static_cast<std::size_t>(m.dim), 0.0);
      for (std::size_t g = 0; g < m.groups->size(); ++g) {
        const auto& group = (*m.groups)[g];
        const double magnitude =
            m.group_l1[g] / static_cast<double>(group.size());
        for (std::int64_t idx : group)
          out[static_cast<std::size_t>(idx)] =
              magnitude *
              static_cast<double>(m.signs[static_cast<std::size_t>(idx)]);
      }
      return out;
    }
  };
  return std::visit(Decode{}, msg);
}

// ---------------------------------------------------------------------------
// Byte accounting. One 4-byte header word per message; payload reals are
// modeled as 32-bit on the wire while in-simulator math stays in doubles.
// ---------------------------------------------------------------------------

inline std::uint64_t encoded_bytes(const CompressedMessage& msg) {
  struct Bytes {
    std::uint64_t operator()(const DenseMsg& m) const {
      return 4 + 4 * static_cast<std::uint64_t>(m.dim);
    }
    std::uint64_t operator()(const SparseMsg& m) const {
      return 4 + 8 * static_cast<std::uint64_t>(m.indices.size());
    }
    std::uint64_t operator()(const DitheredMsg& m) const {
      // 1 sign bit + 1 zero-flag bit + b level bits per coordinate.
      const std::uint64_t payload_bits =
          static_cast<std::uint64_t>(m.dim) *
          (static_cast<std::uint64_t>(m.bits) + 2);
      return 4 + (payload_bits + 7) / 8;
    }
    std::uint64_t operator()(const GroupSignsMsg& m) const {
      return 4 + 4 * static_cast<std::uint64_t>(m.group_l1.size()) +
             (2 * static_cast<std::uint64_t>(m.dim) + 7) / 8;
    }
  };
  return std::visit(Bytes{}, msg);
}

inline std::uint64_t dense_bytes(std::int64_t dim) {
  return 4 + 4 * static_cast<std::uint64_t>(dim);
}

// ---------------------------------------------------------------------------
// On-disk message dump (exact, little-endian; the accounting formulas above
// are the cost model, this format is for persistence/debugging).
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void put_raw(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_raw(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IngestionError("message dump: truncated stream");
  return value;
}

}  // namespace detail

inline void dump_message(const CompressedMessage& msg, std::ostream& os) {
  using detail::put_raw;
  struct Dump {
    std::ostream& os;
    void operator()(const DenseMsg& m) const {
      put_raw<std::uint8_t>(os, 0);
      put_raw<std::uint64_t>(os, static_cast<std::uint64_t>(m.dim));
      for (double v : m.values) put_raw(os, v);
    }
    void operator()(const SparseMsg& m) const {
      put_raw<std::uint8_t>(os, 1);
      put_raw<std::uint64_t>(os, static_cast<std::uint64_t>(m.dim));
      put_raw<std::uint64_t>(os, m.indices.size());
      for (std::int64_t idx : m.indices)
        put_raw<std::uint64_t>(os, static_cast<std::uint64_t>(idx));
      for (double v : m.values) put_raw(os, v);
    }
    void operator()(const DitheredMsg& m) const {
      put_raw<std::uint8_t>(os, 2);
      put_raw<std::uint64_t>(os, static_cast<std::uint64_t>(m.dim));
      put_raw<std::uint8_t>(os, static_cast<std::uint8_t>(m.bits));
      put_raw(os, m.norm);
      for (std::int8_t s : m.signs) put_raw(os, s);
      for (std::int64_t l : m.levels)
        put_raw<std::uint64_t>(os, static_cast<std::uint64_t>(l));
    }
    void operator()(const GroupSignsMsg& m) const {
      put_raw<std::uint8_t>(os, 3);
      put_raw<std::uint64_t>(os, static_cast<std::uint64_t>(m.dim));
      put_raw<std::uint64_t>(os, m.groups->size());
      for (const auto& g : *m.groups) {
        put_raw<std::uint64_t>(os, g.size());
        for (std::int64_t idx : g)
          put_raw<std::uint64_t>(os, static_cast<std::uint64_t>(idx));
      }
      for (double l1 : m.group_l1) put_raw(os, l1);
      for (std::int8_t s : m.signs) put_raw(os, s);
    }
  };
  std::visit(Dump{os}, msg);
}

inline CompressedMessage load_message(std::istream& is) {
  using detail::get_raw;
  const auto tag = get_raw<std::uint8_t>(is);
  switch (tag) {
    case 0: {
      DenseMsg m;
      m.dim = static_cast<std::int64_t>(get_raw<std::uint64_t>(is));
      m.values.resize(static_cast<std::size_t>(m.dim));
      for (double& v : m.values) v = get_raw<double>(is);
      return m;
    }
    case 1: {
      SparseMsg m;
      m.dim = static_cast<std::int64_t>(get_raw<std::uint64_t>(is));
      const auto count = get_raw<std::uint64_t>(is);
      m.indices.resize(count);
      m.values.resize(count);
      for (auto& idx : m.indices)
        idx = static_cast<std::int64_t>(get_raw<std::uint64_t>(is));
      for (double& v : m.values) v = get_raw<double>(is);
      return m;
    }
    case 2: {
      DitheredMsg m;
      m.dim = static_cast<std::int64_t>(get_raw<std::uint64_t>(is));
      m.bits = static_cast<int>(get_raw<std::uint8_t>(is));
      m.norm = get_raw<double>(is);
      m.signs.resize(static_cast<std::size_t>(m.dim));
      m.levels.resize(static_cast<std::size_t>(m.dim));
      for (auto& s : m.signs) s = get_raw<std::int8_t>(is);
      for (auto& l : m.levels)
        l = static_cast<std::int64_t>(get_raw<std::uint64_t>(is));
      return m;
    }
    case 3: {
      GroupSignsMsg m;
      m.dim = static_cast<std::int64_t>(get_raw<std::uint64_t>(is));
      const auto num_groups = get_raw<std::uint64_t>(is);
      IndexPartition groups(num_groups);
      for (auto& g : groups) {
        g.resize(get_raw<std::uint64_t>(is));
        for (auto& idx : g)
          idx = static_cast<std::int64_t>(get_raw<std::uint64_t>(is));
      }
      m.groups = std::make_shared<const IndexPartition>(std::move(groups));
      m.group_l1.resize(num_groups);
      for (double& l1 : m.group_l1) l1 = get_raw<double>(is);
      m.signs.resize(static_cast<std::size_t>(m.dim));
      for (auto& s : m.signs) s = get_raw<std::int8_t>(is);
      return m;
    }
    default:
      throw IngestionError("message dump: unknown variant tag " +
                           std::to_string(tag));
  }
}

// ---------------------------------------------------------------------------
// Statistical validators for the compressibility definitions
// ---------------------------------------------------------------------------

struct UnbiasedReport {
  double omega = 0.0;
  double max_mean_error = 0.0;   // ||mean decode - x||_inf
  double variance_ratio = 0.0;   // avg ||C(x)-x||^2 / ||x||^2
  bool mean_ok = true;
  bool variance_ok = true;
  bool pass() const { return mean_ok && variance_ok; }
};

inline UnbiasedReport validate_unbiased(const CompressorSpec& spec,
                                        std::int64_t dim, std::int64_t trials,
                                        RngStream& rng) {
  if (!is_unbiased(spec))
    throw ConfigError("validate_unbiased: " + spec_name(spec) +
                      " is not unbiased");
  UnbiasedReport report;
  report.omega = omega(spec, dim);

  ParamVector x(static_cast<std::size_t>(dim));
  for (double& v : x) v = rng.normal();
  const double x_norm_sq = l2_norm_sq(x);

  std::vector<double> sum(x.size(), 0.0), sum_sq(x.size(), 0.0);
  double err_sq_total = 0.0;
  for (std::int64_t trial = 0; trial < trials; ++trial) {
    const ParamVector decoded = decode(compress(spec, x, rng));
    for (std::size_t k = 0; k < x.size(); ++k) {
      sum[k] += decoded[k];
      sum_sq[k] += decoded[k] * decoded[k];
    }
    err_sq_total += l2_dist_sq(decoded, x);
  }

  const double inv_trials = 1.0 / static_cast<double>(trials);
  const double sqrt_trials = std::sqrt(static_cast<double>(trials));
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double mean = sum[k] * inv_trials;
    const double var = std::max(0.0, sum_sq[k] * inv_trials - mean * mean);
    const double err = std::fabs(mean - x[k]);
    report.max_mean_error = std::max(report.max_mean_error, err);
    // Absolute floor absorbs accumulation rounding when the compressor is
    // deterministic (zero empirical std).
    const double band = 4.0 * std::sqrt(var) / sqrt_trials +
                        2.3e-16 * static_cast<double>(trials) *
                            (1.0 + std::fabs(x[k]));
    if (err > band) report.mean_ok = false;
  }
  report.variance_ratio = err_sq_total * inv_trials / x_norm_sq;
  if (report.variance_ratio > report.omega * (1.0 + 3.0 / sqrt_trials))
    report.variance_ok = false;
  return report;
}

struct ContractiveReport {
  double q2 = 0.0;
  double max_ratio = 0.0;
  double mean_ratio = 0.0;
  bool pass_flag = true;
  bool pass() const { return pass_flag; }
};

inline ContractiveReport validate_contractive(const CompressorSpec& spec,
                                              std::int64_t dim,
                                              std::int64_t trials,
                                              RngStream& rng) {
  if (!has_contraction(spec))
    throw ConfigError("validate_contractive: " + spec_name(spec) +
                      " has no contraction factor");
  ContractiveReport report;
  report.q2 = contraction_q2(spec, dim);

  double ratio_sum = 0.0;
  for (std::int64_t trial = 0; trial < trials; ++trial) {
    ParamVector x(static_cast<std::size_t>(dim));
    for (double& v : x) v = rng.normal();
    const ParamVector decoded = decode(compress(spec, x, rng));
    const double ratio = l2_dist_sq(decoded, x) / l2_norm_sq(x);
    report.max_ratio = std::max(report.max_ratio, ratio);
    ratio_sum += ratio;
  }
  report.mean_ratio = ratio_sum / static_cast<double>(trials);

  if (std::holds_alternative<ScaledUnbiased>(spec)) {
    // Randomized operator: contraction holds in expectation.
    const double slack =
        1.0 + 3.0 / std::sqrt(static_cast<double>(trials));
    report.pass_flag = report.mean_ratio <= report.q2 * slack;
  } else {
    // Deterministic operators must contract on every input, exactly.
    report.pass_flag = report.max_ratio <= report.q2;
  }
  return report;
}

}  // namespace fedsim
