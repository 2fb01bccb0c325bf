#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/param_vector.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Image classification dataset: row-major feature matrix (n x feature_dim,
// values in [0,1]) plus integer class labels.
struct Dataset {
  std::int64_t feature_dim = 0;
  std::int64_t num_classes = 0;
  std::vector<float> features;  // n * feature_dim
  std::vector<std::int32_t> labels;

  std::int64_t size() const {
    return static_cast<std::int64_t>(labels.size());
  }
  const float* row(std::int64_t i) const {
    return features.data() + i * feature_dim;
  }
};

// Fully-connected ReLU network with softmax cross-entropy loss. Parameters
// are flattened into one ParamVector with a fixed layout: for each layer in
// order, the weight matrix (row-major, out x in) followed by the bias vector.
class MlpArchitecture {
 public:
  MlpArchitecture(std::int64_t input, std::vector<std::int64_t> hidden,
                  std::int64_t output) {
    sizes_.push_back(input);
    for (std::int64_t h : hidden) sizes_.push_back(h);
    sizes_.push_back(output);
    std::int64_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weight_offsets_.push_back(offset);
      offset += sizes_[l] * sizes_[l + 1];
      bias_offsets_.push_back(offset);
      offset += sizes_[l + 1];
    }
    param_count_ = offset;
  }

  std::int64_t param_count() const { return param_count_; }
  std::int64_t input_dim() const { return sizes_.front(); }
  std::int64_t output_dim() const { return sizes_.back(); }
  std::size_t num_layers() const { return sizes_.size() - 1; }
  std::int64_t layer_in(std::size_t l) const { return sizes_[l]; }
  std::int64_t layer_out(std::size_t l) const { return sizes_[l + 1]; }
  std::int64_t weight_offset(std::size_t l) const { return weight_offsets_[l]; }
  std::int64_t bias_offset(std::size_t l) const { return bias_offsets_[l]; }

  // Per-layer uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], zero biases.
  ParamVector init_params(RngStream& rng) const {
    ParamVector params(static_cast<std::size_t>(param_count_), 0.0);
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer_in(l)));
      double* w = params.data() + weight_offset(l);
      const std::int64_t count = layer_in(l) * layer_out(l);
      for (std::int64_t k = 0; k < count; ++k)
        w[k] = bound * (2.0 * rng.uniform() - 1.0);
    }
    return params;
  }

  struct LossGrad {
    double loss;
    ParamVector grad;
  };

  // Mean cross-entropy over the batch and its exact reverse-mode gradient.
  LossGrad loss_and_gradient(const ParamVector& params, const Dataset& data,
                             std::span<const std::int64_t> batch) const {
    check(params, data);
    if (batch.empty()) throw ConfigError("mlp batch: must be nonempty");
    LossGrad out{0.0,
                 ParamVector(static_cast<std::size_t>(param_count_), 0.0)};
    Workspace ws = make_workspace();
    for (std::int64_t idx : batch) {
      const std::int32_t label = data.labels[static_cast<std::size_t>(idx)];
      forward(params, data.row(idx), ws);
      out.loss += nll(ws, label);
      backward(params, data.row(idx), label, ws, out.grad);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    for (double& g : out.grad) g *= inv;
    return out;
  }

  double loss_only(const ParamVector& params, const Dataset& data,
                   std::span<const std::int64_t> batch) const {
    check(params, data);
    Workspace ws = make_workspace();
    double loss = 0.0;
    for (std::int64_t idx : batch) {
      forward(params, data.row(idx), ws);
      loss += nll(ws, data.labels[static_cast<std::size_t>(idx)]);
    }
    return loss / static_cast<double>(batch.size());
  }

  // Argmax class; ties resolved to the lowest class index.
  std::int32_t predict(const ParamVector& params, const float* features) const {
    Workspace ws = make_workspace();
    forward(params, features, ws);
    const auto& logits = ws.activations.back();
    std::int32_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[static_cast<std::size_t>(best)])
        best = static_cast<std::int32_t>(c);
    return best;
  }

  double test_accuracy(const ParamVector& params, const Dataset& test) const {
    check(params, test);
    std::int64_t correct = 0;
    Workspace ws = make_workspace();
    for (std::int64_t i = 0; i < test.size(); ++i) {
      forward(params, test.row(i), ws);
      const auto& logits = ws.activations.back();
      std::int32_t best = 0;
      for (std::size_t c = 1; c < logits.size(); ++c)
        if (logits[c] > logits[static_cast<std::size_t>(best)])
          best = static_cast<std::int32_t>(c);
      if (best == test.labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
  }

 private:
  struct Workspace {
    std::vector<std::vector<double>> activations;  // post-ReLU per layer
    std::vector<std::vector<double>> delta;        // backprop scratch
    std::vector<double> probs;
  };

  Workspace make_workspace() const {
    Workspace ws;
    ws.activations.resize(num_layers());
    ws.delta.resize(num_layers());
    for (std::size_t l = 0; l < num_layers(); ++l) {
      ws.activations[l].resize(static_cast<std::size_t>(layer_out(l)));
      ws.delta[l].resize(static_cast<std::size_t>(layer_out(l)));
    }
    ws.probs.resize(static_cast<std::size_t>(output_dim()));
    return ws;
  }

  void check(const ParamVector& params, const Dataset& data) const {
    if (static_cast<std::int64_t>(params.size()) != param_count_)
      throw ConfigError("mlp params: dimension mismatch");
    if (data.feature_dim != input_dim())
      throw ConfigError("mlp input: dataset feature_dim != input layer size");
  }

  // Fills ws.activations (post-ReLU except the final logits layer).
  void forward(const ParamVector& params, const float* input,
               Workspace& ws) const {
    const double* in = nullptr;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const std::int64_t n_in = layer_in(l);
      const std::int64_t n_out = layer_out(l);
      const double* w = params.data() + weight_offset(l);
      const double* b = params.data() + bias_offset(l);
      double* out = ws.activations[l].data();
      if (l == 0) {
        for (std::int64_t j = 0; j < n_out; ++j) {
          const double* wrow = w + j * n_in;
          double acc = b[j];
          for (std::int64_t k = 0; k < n_in; ++k)
            acc += wrow[k] * static_cast<double>(input[k]);
          out[j] = acc;
        }
      } else {
        for (std::int64_t j = 0; j < n_out; ++j) {
          const double* wrow = w + j * n_in;
          double acc = b[j];
          for (std::int64_t k = 0; k < n_in; ++k) acc += wrow[k] * in[k];
          out[j] = acc;
        }
      }
      if (l + 1 < num_layers())
        for (std::int64_t j = 0; j < n_out; ++j) out[j] = std::max(0.0, out[j]);
      in = out;
    }
  }

  double nll(const Workspace& ws, std::int32_t label) const {
    const auto& logits = ws.activations.back();
    double max_logit = logits[0];
    for (double v : logits) max_logit = std::max(max_logit, v);
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - max_logit);
    return std::log(denom) -
           (logits[static_cast<std::size_t>(label)] - max_logit);
  }

  // Accumulates the sample gradient into grad; assumes forward() just ran.
  void backward(const ParamVector& params, const float* input,
                std::int32_t label, Workspace& ws, ParamVector& grad) const {
    const std::size_t last = num_layers() - 1;
    // Softmax cross-entropy: dL/dlogit = p - onehot.
    {
      const auto& logits = ws.activations[last];
      double max_logit = logits[0];
      for (double v : logits) max_logit = std::max(max_logit, v);
      double denom = 0.0;
      for (std::size_t c = 0; c < logits.size(); ++c) {
        ws.probs[c] = std::exp(logits[c] - max_logit);
        denom += ws.probs[c];
      }
      for (std::size_t c = 0; c < logits.size(); ++c) {
        ws.delta[last][c] = ws.probs[c] / denom;
      }
      ws.delta[last][static_cast<std::size_t>(label)] -= 1.0;
    }
    for (std::size_t l = last + 1; l-- > 0;) {
      const std::int64_t n_in = layer_in(l);
      const std::int64_t n_out = layer_out(l);
      const double* w = params.data() + weight_offset(l);
      double* gw = grad.data() + weight_offset(l);
      double* gb = grad.data() + bias_offset(l);
      const double* d = ws.delta[l].data();
      if (l == 0) {
        for (std::int64_t j = 0; j < n_out; ++j) {
          double* grow = gw + j * n_in;
          const double dj = d[j];
          for (std::int64_t k = 0; k < n_in; ++k)
            grow[k] += dj * static_cast<double>(input[k]);
          gb[j] += dj;
        }
      } else {
        const double* prev = ws.activations[l - 1].data();
        double* dprev = ws.delta[l - 1].data();
        for (std::int64_t k = 0; k < n_in; ++k) dprev[k] = 0.0;
        for (std::int64_t j = 0; j < n_out; ++j) {
          double* grow = gw + j * n_in;
          const double* wrow = w + j * n_in;
          const double dj = d[j];
          for (std::int64_t k = 0; k < n_in; ++k) {
            grow[k] += dj * prev[k];
            dprev[k] += dj * wrow[k];
          }
          gb[j] += dj;
        }
        // ReLU mask of the previous layer.
        for (std::int64_t k = 0; k < n_in; ++k)
          if (prev[k] <= 0.0) dprev[k] = 0.0;
      }
    }
  }

  std::vector<std::int64_t> sizes_;
  std::vector<std::int64_t> weight_offsets_;
  std::vector<std::int64_t> bias_offsets_;
  std::int64_t param_count_ = 0;
};

}  // namespace fedsim
