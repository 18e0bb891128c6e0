#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlab/autodiff.hpp"
#include "fedlab/masking.hpp"
#include "fedlab/rng.hpp"
#include "fedlab/tensor.hpp"

namespace fedlab {

// MLP parameter store. layer_dims = {inputs, hidden..., classes}; weights[l]
// is [dims[l+1] x dims[l]] so first-layer column i belongs to input feature i.
struct ModelParams {
  std::vector<std::size_t> layer_dims;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t num_classes() const { return layer_dims.back(); }
  std::size_t num_layers() const { return weights.size(); }
};

struct LossBreakdown {
  double loc = 0.0;
  double l1 = 0.0;
  double pen = 0.0;
  double total = 0.0;
};

// Glorot-uniform weights, zero biases, reproducible per seed.
inline ModelParams init_params(std::uint64_t seed,
                               const std::vector<std::size_t>& layer_dims) {
  if (layer_dims.size() < 2) {
    throw std::invalid_argument("init_params: need at least input and output dims");
  }
  for (std::size_t d : layer_dims) {
    if (d < 1) throw std::invalid_argument("init_params: all dims must be >= 1");
  }
  Rng rng(mix_seed({seed, 0x6d6f64656cULL}));
  ModelParams p;
  p.layer_dims = layer_dims;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const std::size_t fan_in = layer_dims[l], fan_out = layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = rng.uniform(-bound, bound);
    p.weights.push_back(Tensor::matrix(fan_out, fan_in, std::move(w)));
    p.biases.push_back(Tensor::zeros({fan_out}));
  }
  return p;
}

// Inference-only forward pass: relu between layers, linear output head.
inline std::vector<double> forward(const ModelParams& p,
                                   std::span<const double> z) {
  if (z.size() != p.input_dim()) {
    throw std::invalid_argument("forward: expected " +
                                std::to_string(p.input_dim()) +
                                " inputs, got " + std::to_string(z.size()));
  }
  std::vector<double> act(z.begin(), z.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const Tensor& w = p.weights[l];
    const std::size_t r = w.rows(), c = w.cols();
    next.assign(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      const double* row = w.data.data() + i * c;
      double acc = p.biases[l].data[i];
      for (std::size_t j = 0; j < c; ++j) acc += row[j] * act[j];
      next[i] = acc;
    }
    if (l + 1 < p.num_layers()) {
      for (double& v : next) v = v > 0.0 ? v : 0.0;
    }
    act.swap(next);
  }
  return act;
}

inline int predict(const ModelParams& p, std::span<const double> z) {
  const std::vector<double> logits = forward(p, z);
  int best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c) {
    if (logits[c] > logits[static_cast<std::size_t>(best)]) {
      best = static_cast<int>(c);
    }
  }
  return best;
}

// A built loss tape plus the node ids needed to read values and gradients.
struct LossGraph {
  Graph graph;
  LossBreakdown parts;
  int total_node = -1;
  std::vector<int> weight_nodes;
  std::vector<int> bias_nodes;
};

struct ModelGrads {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

namespace detail {

inline int forward_logits(Graph& g, const std::vector<int>& weight_nodes,
                          const std::vector<int>& bias_nodes, int input) {
  int act = input;
  for (std::size_t l = 0; l < weight_nodes.size(); ++l) {
    act = g.apply(Op::kAdd, g.apply(Op::kMatVec, weight_nodes[l], act),
                  bias_nodes[l]);
    if (l + 1 < weight_nodes.size()) act = g.apply(Op::kRelu, act);
  }
  return act;
}

inline int mean_chain(Graph& g, const std::vector<int>& terms) {
  int acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    acc = g.apply(Op::kAdd, acc, terms[i]);
  }
  return g.scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace detail

// Three-part local loss on sigmoid-gated inputs:
//   loc = mean cross-entropy of the batch,
//   l1  = l1_weight * sum |W| over all layer weights,
//   pen = lambda * (mean_batch dot(softmax(z) - onehot(y), z))^2.
// The penalty residual is d/ds CE(s*z, y) at s=1 in closed form, so one
// reverse sweep differentiates the whole objective. Terms with zero weight
// are not built, leaving the plain ERM tape.
inline LossGraph fedgen_loss(const ModelParams& p, std::span<const double> xs,
                             std::span<const int> ys, const MaskState& mask,
                             double lambda, double l1_weight,
                             bool gate_bypass = false) {
  const std::size_t batch = ys.size();
  const std::size_t j = p.input_dim();
  if (batch == 0) throw std::invalid_argument("fedgen_loss: empty batch");
  if (xs.size() != batch * j) {
    throw std::invalid_argument("fedgen_loss: feature block size mismatch");
  }
  if (lambda < 0.0 || l1_weight < 0.0) {
    throw std::invalid_argument("fedgen_loss: weights must be >= 0");
  }

  LossGraph lg;
  Graph& g = lg.graph;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    lg.weight_nodes.push_back(g.param(p.weights[l]));
    lg.bias_nodes.push_back(g.param(p.biases[l]));
  }

  const std::vector<double> gates = gate_values(mask, gate_bypass);
  const std::size_t classes = p.num_classes();

  std::vector<int> xent_terms;
  std::vector<int> residual_terms;
  xent_terms.reserve(batch);
  for (std::size_t s = 0; s < batch; ++s) {
    std::vector<double> z(j);
    for (std::size_t i = 0; i < j; ++i) z[i] = gates[i] * xs[s * j + i];
    const int input = g.leaf(Tensor::vec(std::move(z)));
    const int logits = detail::forward_logits(g, lg.weight_nodes, lg.bias_nodes, input);
    xent_terms.push_back(g.softmax_xent(logits, ys[s]));
    if (lambda > 0.0) {
      std::vector<double> onehot(classes, 0.0);
      onehot[static_cast<std::size_t>(ys[s])] = 1.0;
      const int probs = g.apply(Op::kSoftmax, logits);
      const int resid = g.apply(Op::kSub, probs, g.leaf(Tensor::vec(std::move(onehot))));
      residual_terms.push_back(g.apply(Op::kDot, resid, logits));
    }
  }

  const int loc = detail::mean_chain(g, xent_terms);
  int total = loc;
  lg.parts.loc = g.value(loc).data[0];

  if (l1_weight > 0.0) {
    int l1_acc = g.apply(Op::kL1Norm, lg.weight_nodes[0]);
    for (std::size_t l = 1; l < lg.weight_nodes.size(); ++l) {
      l1_acc = g.apply(Op::kAdd, l1_acc, g.apply(Op::kL1Norm, lg.weight_nodes[l]));
    }
    const int l1 = g.scale(l1_acc, l1_weight);
    lg.parts.l1 = g.value(l1).data[0];
    total = g.apply(Op::kAdd, total, l1);
  }

  if (lambda > 0.0) {
    const int mean_resid = detail::mean_chain(g, residual_terms);
    const int pen = g.scale(g.apply(Op::kSquare, mean_resid), lambda);
    lg.parts.pen = g.value(pen).data[0];
    total = g.apply(Op::kAdd, total, pen);
  }

  lg.total_node = total;
  lg.parts.total = g.value(total).data[0];
  return lg;
}

// Plain ERM batch loss: same tape as fedgen_loss with gating bypassed and
// both regularizers absent.
inline LossGraph erm_loss(const ModelParams& p, std::span<const double> xs,
                          std::span<const int> ys) {
  MaskState unused;
  unused.features = p.input_dim();
  unused.fanout = 1;
  unused.m.assign(p.input_dim(), 0.0);
  return fedgen_loss(p, xs, ys, unused, 0.0, 0.0, /*gate_bypass=*/true);
}

inline ModelGrads extract_grads(const LossGraph& lg,
                                const std::map<int, Tensor>& grads) {
  ModelGrads out;
  for (int id : lg.weight_nodes) out.weights.push_back(grads.at(id));
  for (int id : lg.bias_nodes) out.biases.push_back(grads.at(id));
  return out;
}

inline void sgd_step(ModelParams& p, const ModelGrads& g, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("sgd_step: eta must be > 0");
  if (g.weights.size() != p.weights.size() ||
      g.biases.size() != p.biases.size()) {
    throw std::invalid_argument("sgd_step: layer count mismatch");
  }
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    if (g.weights[l].shape != p.weights[l].shape ||
        g.biases[l].shape != p.biases[l].shape) {
      throw std::invalid_argument("sgd_step: gradient shape mismatch at layer " +
                                  std::to_string(l));
    }
    for (std::size_t i = 0; i < p.weights[l].data.size(); ++i) {
      p.weights[l].data[i] -= eta * g.weights[l].data[i];
    }
    for (std::size_t i = 0; i < p.biases[l].data.size(); ++i) {
      p.biases[l].data[i] -= eta * g.biases[l].data[i];
    }
  }
}

// First-layer weights attached to input feature i (column i, fanout entries).
inline std::vector<double> feature_weights(const ModelParams& p,
                                           std::size_t feature) {
  const std::size_t j = p.input_dim();
  if (feature >= j) {
    throw std::invalid_argument("feature_weights: index " +
                                std::to_string(feature) + " out of range");
  }
  const Tensor& w = p.weights.front();
  std::vector<double> out(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) out[r] = w.data[r * j + feature];
  return out;
}

// All first-layer weights flattened in feature-major order, the layout the
// mask statistics track: entry i*fanout + r = W0[r][i].
inline std::vector<double> first_layer_by_feature(const ModelParams& p) {
  const Tensor& w = p.weights.front();
  const std::size_t j = w.cols(), h = w.rows();
  std::vector<double> out(j * h);
  for (std::size_t i = 0; i < j; ++i) {
    for (std::size_t r = 0; r < h; ++r) out[i * h + r] = w.data[r * j + i];
  }
  return out;
}

}  // namespace fedlab
