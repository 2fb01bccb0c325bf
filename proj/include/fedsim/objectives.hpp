#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/mlp.hpp"
#include "fedsim/param_vector.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// One client's local objective f_i. Implementations are immutable after
// construction; gradient calls are pure given an explicit stream.
class ClientObjective {
 public:
  virtual ~ClientObjective() = default;
  virtual std::int64_t dim() const = 0;
  virtual double loss(const ParamVector& x) const = 0;
  virtual ParamVector full_gradient(const ParamVector& x) const = 0;
  virtual ParamVector stochastic_gradient(const ParamVector& x,
                                          std::int64_t batch_size,
                                          RngStream& rng) const = 0;
};

// f_i(x) = 1/2 sum_k a_k (x_k - b_k)^2 with diagonal curvature a > 0.
// Stochastic gradient adds iid N(0, sigma^2) noise per coordinate.
class QuadraticClient final : public ClientObjective {
 public:
  QuadraticClient(ParamVector curvature, ParamVector center, double sigma)
      : a_(std::move(curvature)), b_(std::move(center)), sigma_(sigma) {
    if (a_.size() != b_.size())
      throw ConfigError("quadratic client: curvature/center size mismatch");
  }

  std::int64_t dim() const override {
    return static_cast<std::int64_t>(a_.size());
  }

  double loss(const ParamVector& x) const override {
    require_dim(x);
    double acc = 0.0;
    for (std::size_t k = 0; k < a_.size(); ++k) {
      const double diff = x[k] - b_[k];
      acc += a_[k] * diff * diff;
    }
    return 0.5 * acc;
  }

  ParamVector full_gradient(const ParamVector& x) const override {
    require_dim(x);
    ParamVector g(a_.size());
    for (std::size_t k = 0; k < a_.size(); ++k) g[k] = a_[k] * (x[k] - b_[k]);
    return g;
  }

  ParamVector stochastic_gradient(const ParamVector& x, std::int64_t,
                                  RngStream& rng) const override {
    ParamVector g = full_gradient(x);
    if (sigma_ > 0.0)
      for (double& v : g) v += sigma_ * rng.normal();
    return g;
  }

  const ParamVector& curvature() const { return a_; }
  const ParamVector& center() const { return b_; }

 private:
  void require_dim(const ParamVector& x) const {
    if (x.size() != a_.size())
      throw ConfigError("quadratic client: model dimension mismatch");
  }

  ParamVector a_;
  ParamVector b_;
  double sigma_;
};

// Local MLP objective over a shard of a shared dataset. Minibatches are
// sampled with replacement from the client's local indices.
class MlpClient final : public ClientObjective {
 public:
  MlpClient(std::shared_ptr<const MlpArchitecture> arch,
            std::shared_ptr<const Dataset> data,
            std::vector<std::int64_t> local_indices)
      : arch_(std::move(arch)),
        data_(std::move(data)),
        indices_(std::move(local_indices)) {
    if (indices_.empty())
      throw ConfigError("mlp client: empty local index list");
  }

  std::int64_t dim() const override { return arch_->param_count(); }

  double loss(const ParamVector& x) const override {
    return arch_->loss_only(x, *data_, indices_);
  }

  ParamVector full_gradient(const ParamVector& x) const override {
    return arch_->loss_and_gradient(x, *data_, indices_).grad;
  }

  ParamVector stochastic_gradient(const ParamVector& x,
                                  std::int64_t batch_size,
                                  RngStream& rng) const override {
    if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
    std::vector<std::int64_t> batch(static_cast<std::size_t>(batch_size));
    for (auto& idx : batch)
      idx = indices_[static_cast<std::size_t>(
          rng.uniform_below(indices_.size()))];
    return arch_->loss_and_gradient(x, *data_, batch).grad;
  }

  const std::vector<std::int64_t>& local_indices() const { return indices_; }

 private:
  std::shared_ptr<const MlpArchitecture> arch_;
  std::shared_ptr<const Dataset> data_;
  std::vector<std::int64_t> indices_;
};

// The federated problem: N clients sharing one model dimension, plus the
// constants needed by theory helpers and closed-form checks when available.
struct FederatedProblem {
  std::vector<std::shared_ptr<const ClientObjective>> clients;
  std::int64_t dim = 0;

  std::optional<ParamVector> optimum;      // closed-form x*, quadratics only
  std::optional<double> lipschitz;         // exact L for quadratics
  std::optional<double> initial_gap;       // Delta = f(x0) - f(x*)
  double sigma = 0.0;

  // MLP-specific shared pieces (null for quadratics).
  std::shared_ptr<const MlpArchitecture> mlp;
  std::shared_ptr<const Dataset> train_set;
  std::shared_ptr<const Dataset> test_set;

  std::int64_t num_clients() const {
    return static_cast<std::int64_t>(clients.size());
  }

  double global_loss(const ParamVector& x) const {
    double acc = 0.0;
    for (const auto& c : clients) acc += c->loss(x);
    return acc / static_cast<double>(clients.size());
  }

  ParamVector global_gradient(const ParamVector& x) const {
    ParamVector g(x.size(), 0.0);
    for (const auto& c : clients) {
      const ParamVector gi = c->full_gradient(x);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k];
    }
    const double inv = 1.0 / static_cast<double>(clients.size());
    for (double& v : g) v *= inv;
    return g;
  }

  ParamVector initial_model(std::uint64_t seed) const {
    if (mlp) {
      RngStream rng(seed, 0, 0, StreamPurpose::InitNoise);
      return mlp->init_params(rng);
    }
    return ParamVector(static_cast<std::size_t>(dim), 0.0);
  }
};

// Synthetic heterogeneous quadratic testbed with exact optimum and constants.
// Curvature entries ~ U[0.5, 1.5]; centers componentwise N(0, heterogeneity^2).
inline FederatedProblem make_quadratic_problem(std::int64_t num_clients,
                                               std::int64_t dim,
                                               double heterogeneity,
                                               double sigma,
                                               std::uint64_t seed) {
  if (num_clients < 1) throw ConfigError("problem.clients: must be >= 1");
  if (dim < 1) throw ConfigError("problem.dim: must be >= 1");

  FederatedProblem problem;
  problem.dim = dim;
  problem.sigma = sigma;

  ParamVector curvature_sum(static_cast<std::size_t>(dim), 0.0);
  ParamVector weighted_center_sum(static_cast<std::size_t>(dim), 0.0);
  double lipschitz = 0.0;
  for (std::int64_t i = 0; i < num_clients; ++i) {
    RngStream rng(seed, 0, static_cast<std::uint64_t>(i),
                  StreamPurpose::Partition);
    ParamVector a(static_cast<std::size_t>(dim));
    ParamVector b(static_cast<std::size_t>(dim));
    for (std::size_t k = 0; k < a.size(); ++k) {
      a[k] = 0.5 + rng.uniform();
      b[k] = heterogeneity * rng.normal();
      curvature_sum[k] += a[k];
      weighted_center_sum[k] += a[k] * b[k];
      lipschitz = std::max(lipschitz, a[k]);
    }
    problem.clients.push_back(std::make_shared<QuadraticClient>(
        std::move(a), std::move(b), sigma));
  }

  ParamVector optimum(static_cast<std::size_t>(dim));
  for (std::size_t k = 0; k < optimum.size(); ++k)
    optimum[k] = weighted_center_sum[k] / curvature_sum[k];
  problem.lipschitz = lipschitz;
  const double f_star = problem.global_loss(optimum);
  const double f_zero =
      problem.global_loss(ParamVector(static_cast<std::size_t>(dim), 0.0));
  problem.initial_gap = f_zero - f_star;
  problem.optimum = std::move(optimum);
  return problem;
}

// MLP problem over a shard-partitioned image dataset (the 784-h1-h2-10
// architecture by default).
inline FederatedProblem make_mlp_problem(std::shared_ptr<const Dataset> train,
                                         std::shared_ptr<const Dataset> test,
                                         std::int64_t num_clients,
                                         std::int64_t shards_per_client,
                                         std::vector<std::int64_t> hidden,
                                         std::uint64_t seed) {
  FederatedProblem problem;
  problem.train_set = std::move(train);
  problem.test_set = std::move(test);
  problem.mlp = std::make_shared<const MlpArchitecture>(
      problem.train_set->feature_dim, std::move(hidden),
      problem.train_set->num_classes);
  problem.dim = problem.mlp->param_count();

  RngStream rng(seed, 0, 0, StreamPurpose::Partition);
  auto assignment = shard_partition(problem.train_set->labels, num_clients,
                                    shards_per_client, rng);
  for (auto& indices : assignment)
    problem.clients.push_back(std::make_shared<MlpClient>(
        problem.mlp, problem.train_set, std::move(indices)));
  return problem;
}

struct EvalResult {
  double train_loss = 0.0;
  double grad_norm_sq = 0.0;
  std::optional<double> test_accuracy;
  std::int64_t subsample = 0;  // 0 = exact / full data
};

// Train loss and squared global gradient norm; exact for quadratics, over a
// stated subsample of the training data for MLPs. Test accuracy when a test
// set is present.
inline EvalResult evaluate(const FederatedProblem& problem,
                           const ParamVector& x, std::int64_t eval_subsample,
                           RngStream& rng) {
  EvalResult result;
  if (!problem.mlp) {
    result.train_loss = problem.global_loss(x);
    result.grad_norm_sq = l2_norm_sq(problem.global_gradient(x));
    return result;
  }

  const auto total = problem.train_set->size();
  std::vector<std::int64_t> batch;
  if (eval_subsample > 0 && eval_subsample < total) {
    batch.resize(static_cast<std::size_t>(eval_subsample));
    for (auto& idx : batch)
      idx = static_cast<std::int64_t>(
          rng.uniform_below(static_cast<std::uint64_t>(total)));
    result.subsample = eval_subsample;
  } else {
    batch.resize(static_cast<std::size_t>(total));
    std::iota(batch.begin(), batch.end(), std::int64_t{0});
  }
  const auto lg = problem.mlp->loss_and_gradient(x, *problem.train_set, batch);
  result.train_loss = lg.loss;
  result.grad_norm_sq = l2_norm_sq(lg.grad);
  if (problem.test_set)
    result.test_accuracy = problem.mlp->test_accuracy(x, *problem.test_set);
  return result;
}

}  // namespace fedsim
