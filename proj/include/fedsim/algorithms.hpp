#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fedsim/compressors.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/objectives.hpp"
#include "fedsim/param_vector.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct HyperParams {
  double eta_l = 0.1;
  double eta_g = 1.0;
  std::int64_t local_steps = 10;     // K
  std::int64_t sampled_clients = 1;  // S
  std::int64_t rounds = 1;           // T
  std::int64_t batch_size = 32;
  double alpha = 1.0;  // scaling factor of control updates (SCALLION)
  double beta = 1.0;   // momentum factor (SCAFCOM)
  std::int64_t control_init_batch = 0;  // 0 = zero-initialized controls
  bool theory_mode = false;  // clamp eta_l to the theory recipe's bound

  void validate(std::int64_t num_clients) const {
    if (!(eta_l > 0.0)) throw ConfigError("hyperparams.eta_l: must be > 0");
    if (!(eta_g > 0.0)) throw ConfigError("hyperparams.eta_g: must be > 0");
    if (local_steps < 1)
      throw ConfigError("hyperparams.local_steps: must be >= 1");
    if (sampled_clients < 1 || sampled_clients > num_clients)
      throw ConfigError("hyperparams.sampled_clients: must satisfy 1 <= S <= N");
    if (rounds < 0) throw ConfigError("hyperparams.rounds: must be >= 0");
    if (batch_size < 1)
      throw ConfigError("hyperparams.batch_size: must be >= 1");
    if (control_init_batch < 0)
      throw ConfigError("hyperparams.control_init_batch: must be >= 0");
    if (!(alpha > 0.0) || alpha > 1.0)
      throw ConfigError("algorithm.alpha: must be in (0, 1]");
    if (!(beta > 0.0) || beta > 1.0)
      throw ConfigError("algorithm.beta: must be in (0, 1]");
  }
};

enum class AlgoKind {
  FedAvg,
  ScaffoldOriginal,  // two dense uplink variables per participant
  ScaffoldSingle,    // single increment variable, algebraically equivalent
  Scallion,          // single uplink, unbiased compression, scaling alpha
  Scafcom,           // single uplink, contractive compression, momentum beta
};

struct AlgorithmSpec {
  AlgoKind kind = AlgoKind::ScaffoldSingle;
  CompressorSpec compressor = Identity{};
  // Diagnostic switch: anchor the momentum update at c_i instead of v_i,
  // which turns SCAFCOM into SCALLION with alpha = beta.
  bool momentum_from_control = false;

  std::string name() const {
    switch (kind) {
      case AlgoKind::FedAvg: return "fedavg";
      case AlgoKind::ScaffoldOriginal: return "scaffold_original";
      case AlgoKind::ScaffoldSingle: return "scaffold";
      case AlgoKind::Scallion: return "scallion";
      case AlgoKind::Scafcom: return "scafcom";
    }
    return "?";
  }

  bool uses_controls() const { return kind != AlgoKind::FedAvg; }
  bool uses_momentum() const { return kind == AlgoKind::Scafcom; }

  void validate(const HyperParams& hp, std::int64_t num_clients,
                std::int64_t dim) const {
    switch (kind) {
      case AlgoKind::Scallion:
        if (!is_unbiased(compressor))
          throw ConfigError("scallion requires an unbiased compressor, got " +
                            spec_name(compressor));
        break;
      case AlgoKind::Scafcom:
        if (!has_contraction(compressor))
          throw ConfigError(
              "scafcom requires a contractive compressor (biased, or unbiased "
              "wrapped in scaling), got " +
              spec_name(compressor));
        contraction_q2(compressor, dim);  // surfaces bad parameters early
        break;
      default:
        if (!std::holds_alternative<Identity>(compressor))
          throw ConfigError(name() + " is full-precision only; remove the "
                            "compressor section");
        break;
    }
    hp.validate(num_clients);
  }
};

struct ClientState {
  ParamVector c;                  // control variable c_i
  std::optional<ParamVector> v;   // momentum variable v_i (SCAFCOM only)
};

struct ServerState {
  ParamVector x;  // global model
  ParamVector c;  // global control
  std::int64_t t = 0;
};

// Controls default to zero. With control_init_batch = B > 0, each c_i is a
// B-sample stochastic gradient at x0 (init-noise stream) and momentum starts
// at c_i.
inline std::vector<ClientState> init_states(const FederatedProblem& problem,
                                            const AlgorithmSpec& algo,
                                            std::int64_t control_init_batch = 0,
                                            const ParamVector* x0 = nullptr,
                                            std::uint64_t seed = 0) {
  std::vector<ClientState> states;
  if (!algo.uses_controls()) return states;
  states.resize(static_cast<std::size_t>(problem.num_clients()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    auto& s = states[i];
    if (control_init_batch > 0) {
      if (!x0)
        throw ConfigError("init_states: control_init_batch needs the model");
      RngStream rng(seed, 0, static_cast<std::uint64_t>(i),
                    StreamPurpose::InitNoise);
      s.c = problem.clients[i]->stochastic_gradient(*x0, control_init_batch,
                                                    rng);
    } else {
      s.c.assign(static_cast<std::size_t>(problem.dim), 0.0);
    }
    if (algo.uses_momentum()) s.v = s.c;
  }
  return states;
}

// Global control starts at the mean of the client controls, keeping the
// invariant c = (1/N) sum c_i from round 0 on.
inline ServerState init_server(const FederatedProblem& problem,
                               std::uint64_t seed,
                               const std::vector<ClientState>* states =
                                   nullptr) {
  ServerState server;
  server.x = problem.initial_model(seed);
  server.c.assign(static_cast<std::size_t>(problem.dim), 0.0);
  if (states && !states->empty()) {
    const double inv = 1.0 / static_cast<double>(states->size());
    for (const auto& s : *states)
      for (std::size_t k = 0; k < server.c.size(); ++k)
        server.c[k] += inv * s.c[k];
  }
  server.t = 0;
  return server;
}

struct LocalLoopResult {
  ParamVector y;      // iterate after K corrected SGD steps
  ParamVector g_bar;  // running average of the K minibatch gradients
};

// K local steps y <- y - eta_l (g - c_i + c). Algebraically,
// (x - y)/(eta_l K) - c == g_bar - c_i.
inline LocalLoopResult local_loop(const ClientObjective& client,
                                  const ParamVector& x_t,
                                  const ParamVector& c_i, const ParamVector& c,
                                  double eta_l, std::int64_t local_steps,
                                  std::int64_t batch_size, RngStream& rng) {
  if (x_t.size() != c_i.size() || x_t.size() != c.size())
    throw ConfigError("local_loop: control dimension mismatch");
  LocalLoopResult out{x_t, ParamVector(x_t.size(), 0.0)};
  for (std::int64_t k = 0; k < local_steps; ++k) {
    const ParamVector g = client.stochastic_gradient(out.y, batch_size, rng);
    for (std::size_t j = 0; j < out.y.size(); ++j) {
      out.y[j] -= eta_l * (g[j] - c_i[j] + c[j]);
      out.g_bar[j] += g[j];
    }
  }
  const double inv_k = 1.0 / static_cast<double>(local_steps);
  for (double& v : out.g_bar) v *= inv_k;
  return out;
}

struct UplinkReport {
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  double max_increment_norm = 0.0;  // max over participants of ||Delta_i||
  std::vector<std::int64_t> participants;
};

namespace detail {

struct ClientRoundOutput {
  ParamVector transmitted;        // decoded uplink payload
  ParamVector model_delta;        // y - x (full-precision algorithms only)
  ParamVector momentum;           // new v_i (SCAFCOM)
  double increment_norm = 0.0;
  std::uint64_t bytes = 0;
};

template <typename Fn>
void for_each_participant(const std::vector<std::int64_t>& participants,
                          int threads, Fn&& fn) {
  const auto count = participants.size();
  if (threads <= 1 || count <= 1) {
    for (std::size_t slot = 0; slot < count; ++slot) fn(slot);
    return;
  }
  const int workers = std::min<int>(threads, static_cast<int>(count));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t slot = static_cast<std::size_t>(w); slot < count;
           slot += static_cast<std::size_t>(workers))
        fn(slot);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Executes one round of the configured algorithm, mutating server state and
// client states. Participant loops may run concurrently (each owns its keyed
// streams); the aggregation is a deterministic reduction in ascending client
// index, so the trajectory is independent of the execution schedule.
inline UplinkReport run_round(const FederatedProblem& problem,
                              const AlgorithmSpec& algo,
                              const HyperParams& hp, ServerState& server,
                              std::vector<ClientState>& states,
                              const std::vector<std::int64_t>& participants,
                              std::uint64_t seed, int threads = 1) {
  const auto dim = problem.dim;
  const auto t = static_cast<std::uint64_t>(server.t);
  const double eta_lk = hp.eta_l * static_cast<double>(hp.local_steps);
  const auto num_participants = static_cast<double>(participants.size());

  std::vector<detail::ClientRoundOutput> outputs(participants.size());
  std::atomic<bool> non_finite{false};
  detail::for_each_participant(participants, threads, [&](std::size_t slot) {
    const std::int64_t i = participants[slot];
    const auto& client = *problem.clients[static_cast<std::size_t>(i)];
    RngStream minibatch_rng(seed, t, static_cast<std::uint64_t>(i),
                            StreamPurpose::Minibatch);
    RngStream compression_rng(seed, t, static_cast<std::uint64_t>(i),
                              StreamPurpose::Compression);
    const ParamVector zero(algo.uses_controls() ? 0 : server.x.size(), 0.0);
    const ParamVector& c_i =
        algo.uses_controls() ? states[static_cast<std::size_t>(i)].c : zero;
    const ParamVector& c = algo.uses_controls() ? server.c : zero;

    auto local = local_loop(client, server.x, c_i, c, hp.eta_l,
                            hp.local_steps, hp.batch_size, minibatch_rng);
    auto& out = outputs[slot];

    if (algo.kind == AlgoKind::FedAvg ||
        algo.kind == AlgoKind::ScaffoldOriginal) {
      out.model_delta.resize(local.y.size());
      for (std::size_t k = 0; k < local.y.size(); ++k)
        out.model_delta[k] = local.y[k] - server.x[k];
      out.bytes = dense_bytes(dim);
      if (algo.kind == AlgoKind::ScaffoldOriginal) {
        // Control delta c_i^{t+1} - c_i^t = (x - y)/(eta_l K) - c.
        out.transmitted.resize(local.y.size());
        double norm_sq = 0.0;
        for (std::size_t k = 0; k < local.y.size(); ++k) {
          out.transmitted[k] =
              (server.x[k] - local.y[k]) / eta_lk - server.c[k];
          norm_sq += out.transmitted[k] * out.transmitted[k];
        }
        out.increment_norm = std::sqrt(norm_sq);
        out.bytes += dense_bytes(dim);  // second dense uplink variable
      } else {
        out.increment_norm = l2_norm(out.model_delta) / eta_lk;
      }
      return;
    }

    // Single-uplink family: ScaffoldSingle / SCALLION / SCAFCOM.
    ParamVector increment(local.y.size());  // (x - y)/(eta_l K) - c
    for (std::size_t k = 0; k < local.y.size(); ++k)
      increment[k] = (server.x[k] - local.y[k]) / eta_lk - c[k];

    ParamVector payload(local.y.size());
    if (algo.kind == AlgoKind::Scafcom) {
      const ParamVector& v_i = *states[static_cast<std::size_t>(i)].v;
      const double carry = 1.0 - hp.beta;
      for (std::size_t k = 0; k < payload.size(); ++k) {
        const double anchor = algo.momentum_from_control ? c_i[k] : v_i[k];
        payload[k] = carry * (anchor - c_i[k]) + hp.beta * increment[k];
      }
      out.momentum.resize(payload.size());
      for (std::size_t k = 0; k < payload.size(); ++k)
        out.momentum[k] = c_i[k] + payload[k];  // v_i^{t+1}
      out.increment_norm = l2_norm(payload);
    } else {
      const double scale =
          algo.kind == AlgoKind::Scallion ? hp.alpha : 1.0;
      for (std::size_t k = 0; k < payload.size(); ++k)
        payload[k] = scale * increment[k];
      out.increment_norm = l2_norm(increment);
    }

    // A blown-up payload would feed garbage into the quantizers; flag it and
    // let the caller surface the divergence instead.
    if (!all_finite(payload)) {
      non_finite.store(true, std::memory_order_relaxed);
      out.transmitted.assign(payload.size(), 0.0);
      return;
    }
    const CompressedMessage msg =
        compress(algo.compressor, payload, compression_rng);
    out.bytes = encoded_bytes(msg);
    out.transmitted = decode(msg);
  });
  if (non_finite.load(std::memory_order_relaxed))
    throw DivergenceError("client update is not finite");

  UplinkReport report;
  report.participants = participants;
  for (const auto& out : outputs) {
    report.uplink_bytes += out.bytes;
    report.max_increment_norm =
        std::max(report.max_increment_norm, out.increment_norm);
  }
  // Downlink: x (plus c for control-variate algorithms), dense, per client.
  const std::uint64_t per_client_down =
      algo.uses_controls() ? 2 * dense_bytes(dim) : dense_bytes(dim);
  report.downlink_bytes = per_client_down * participants.size();

  // Deterministic ordered reduction (participants are sorted ascending).
  if (algo.kind == AlgoKind::FedAvg ||
      algo.kind == AlgoKind::ScaffoldOriginal) {
    ParamVector model_sum(static_cast<std::size_t>(dim), 0.0);
    ParamVector control_sum(static_cast<std::size_t>(dim), 0.0);
    for (std::size_t slot = 0; slot < participants.size(); ++slot) {
      const auto& out = outputs[slot];
      for (std::size_t k = 0; k < model_sum.size(); ++k)
        model_sum[k] += out.model_delta[k];
      if (algo.kind == AlgoKind::ScaffoldOriginal) {
        const std::int64_t i = participants[slot];
        auto& c_i = states[static_cast<std::size_t>(i)].c;
        for (std::size_t k = 0; k < control_sum.size(); ++k) {
          control_sum[k] += out.transmitted[k];
          c_i[k] += out.transmitted[k];
        }
      }
    }
    const double step = hp.eta_g / num_participants;
    for (std::size_t k = 0; k < server.x.size(); ++k)
      server.x[k] += step * model_sum[k];
    if (algo.kind == AlgoKind::ScaffoldOriginal) {
      const double inv_n = 1.0 / static_cast<double>(problem.num_clients());
      for (std::size_t k = 0; k < server.c.size(); ++k)
        server.c[k] += inv_n * control_sum[k];
    }
  } else {
    ParamVector update_sum(static_cast<std::size_t>(dim), 0.0);
    ParamVector delta_sum(static_cast<std::size_t>(dim), 0.0);
    for (std::size_t slot = 0; slot < participants.size(); ++slot) {
      const auto& out = outputs[slot];
      const std::int64_t i = participants[slot];
      auto& state = states[static_cast<std::size_t>(i)];
      for (std::size_t k = 0; k < update_sum.size(); ++k) {
        update_sum[k] += out.transmitted[k] + server.c[k];
        delta_sum[k] += out.transmitted[k];
        state.c[k] += out.transmitted[k];
      }
      if (algo.uses_momentum()) *state.v = out.momentum;
    }
    const double step = hp.eta_g * eta_lk / num_participants;
    const double inv_n = 1.0 / static_cast<double>(problem.num_clients());
    for (std::size_t k = 0; k < server.x.size(); ++k) {
      server.x[k] -= step * update_sum[k];
      server.c[k] += inv_n * delta_sum[k];
    }
  }
  server.t += 1;
  return report;
}

// ---------------------------------------------------------------------------
// Theory-parameter recipes
// ---------------------------------------------------------------------------

struct ScallionTheoryParams {
  double alpha;
  double eta_l_kl_max;   // upper bound on eta_l * K * L
  double eta_g_eta_l_kl; // prescribed eta_g * eta_l * K * L
};

inline ScallionTheoryParams scallion_theory_params(
    double lipschitz, double initial_gap, double sigma, std::int64_t n,
    std::int64_t s, std::int64_t k, std::int64_t t, double omega_value) {
  if (!(lipschitz > 0.0) || !(initial_gap > 0.0) || sigma < 0.0 ||
      omega_value < 0.0 || n < 1 || s < 1 || s > n || k < 1 || t < 1)
    throw ConfigError("scallion_theory_params: nonpositive or invalid input");
  const double nn = static_cast<double>(n), ss = static_cast<double>(s);
  const double kk = static_cast<double>(k), tt = static_cast<double>(t);
  const double one_plus_omega = 1.0 + omega_value;
  const double ld = lipschitz * initial_gap;
  const double sigma_sq = sigma * sigma;

  const double alpha =
      1.0 / (4.0 * one_plus_omega +
             std::sqrt(one_plus_omega * tt * ss * sigma_sq / (nn * nn * kk * ld)) +
             std::cbrt(one_plus_omega * tt * sigma_sq / (nn * kk * ld)));
  const double e_sq = std::exp(2.0);
  ScallionTheoryParams out;
  out.alpha = alpha;
  out.eta_l_kl_max = std::sqrt(alpha * one_plus_omega / (1400.0 * e_sq * nn));
  out.eta_g_eta_l_kl = 27.0 * alpha * ss / nn;
  return out;
}

struct ScafcomTheoryParams {
  double beta;
  double eta_l_kl_max;
  double eta_g_eta_l_kl;
};

inline ScafcomTheoryParams scafcom_theory_params(
    double lipschitz, double initial_gap, double sigma, std::int64_t n,
    std::int64_t s, std::int64_t k, std::int64_t t, double q) {
  if (!(lipschitz > 0.0) || !(initial_gap > 0.0) || sigma < 0.0 || n < 1 ||
      s < 1 || s > n || k < 1 || t < 1)
    throw ConfigError("scafcom_theory_params: nonpositive or invalid input");
  if (q < 0.0 || q >= 1.0)
    throw ConfigError("scafcom_theory_params: q must be in [0, 1)");
  const double nn = static_cast<double>(n), ss = static_cast<double>(s);
  const double kk = static_cast<double>(k), tt = static_cast<double>(t);
  const double one_minus_q = 1.0 - q;
  const double ld = lipschitz * initial_gap;
  const double sigma_sq = sigma * sigma;

  const double common = tt * ss * sigma_sq / (nn * kk * ld);
  const double beta =
      1.0 / (1.0 + std::sqrt(common / nn) + std::cbrt(common / one_minus_q) +
             std::pow(common / (one_minus_q * one_minus_q), 0.25));
  const double e_sq = std::exp(2.0);
  ScafcomTheoryParams out;
  out.beta = beta;
  out.eta_l_kl_max = std::sqrt(
      beta * one_minus_q * one_minus_q /
      (36.0 * e_sq * nn *
       (189.0 * one_minus_q * one_minus_q + 306.0 * beta * beta)));
  out.eta_g_eta_l_kl =
      1.0 / (20.0 * nn / (beta * ss) + 28.0 * nn / (one_minus_q * ss));
  return out;
}

}  // namespace fedsim
