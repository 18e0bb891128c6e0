#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedlab {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// How the per-element EMA variances of a feature's fan-out weights are
// collapsed into the single v(w_i) used by the mask update.
enum class VarianceMode { kMean, kMax, kNorm };

inline VarianceMode parse_variance_mode(const std::string& s) {
  if (s == "mean") return VarianceMode::kMean;
  if (s == "max") return VarianceMode::kMax;
  if (s == "norm") return VarianceMode::kNorm;
  throw std::invalid_argument("unknown variance mode: " + s);
}

// Per-client mask state: one unbounded logit per input feature plus EMA
// mean/variance of the first-layer weights, grouped by feature (feature i
// owns entries [i*fanout, (i+1)*fanout)).
struct MaskState {
  std::vector<double> m;
  std::vector<double> u;
  std::vector<double> v;
  int epochs_seen = 0;
  int e_init = 5;
  double beta = 0.1;
  double delta = 0.9;
  double alpha = 10.0;
  std::size_t features = 0;
  std::size_t fanout = 0;
  VarianceMode variance_mode = VarianceMode::kMean;
};

struct GatedInput {
  std::vector<double> z;
};

inline MaskState init_mask(std::size_t features, std::size_t fanout,
                           double alpha, double beta, double delta,
                           int e_init) {
  if (features < 1 || fanout < 1) {
    throw std::invalid_argument("init_mask: dimensions must be >= 1");
  }
  if (!(beta > 0.0 && beta <= 1.0) || !(delta > 0.0 && delta <= 1.0) ||
      !(alpha > 0.0)) {
    throw std::invalid_argument("init_mask: invalid rates (need 0<beta<=1, "
                                "0<delta<=1, alpha>0)");
  }
  MaskState s;
  s.m.assign(features, 1.0);
  s.u.assign(features * fanout, 0.0);
  s.v.assign(features * fanout, 0.0);
  s.epochs_seen = 0;
  s.e_init = e_init;
  s.beta = beta;
  s.delta = delta;
  s.alpha = alpha;
  s.features = features;
  s.fanout = fanout;
  return s;
}

// One epoch of weight statistics: u <- beta*w + (1-beta)*u_old and
// v <- delta*v + (1-delta)*(w - u_old)^2, elementwise.
inline void ema_update(MaskState& s, std::span<const double> weights) {
  if (weights.size() != s.u.size()) {
    throw std::invalid_argument("ema_update: expected " +
                                std::to_string(s.u.size()) + " weights, got " +
                                std::to_string(weights.size()));
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double u_old = s.u[i];
    const double w = weights[i];
    s.u[i] = s.beta * w + (1.0 - s.beta) * u_old;
    const double dev = w - u_old;
    s.v[i] = s.delta * s.v[i] + (1.0 - s.delta) * dev * dev;
  }
  ++s.epochs_seen;
}

inline std::vector<double> feature_variance(const MaskState& s) {
  std::vector<double> out(s.features, 0.0);
  for (std::size_t i = 0; i < s.features; ++i) {
    const double* grp = s.v.data() + i * s.fanout;
    double acc = 0.0;
    switch (s.variance_mode) {
      case VarianceMode::kMean:
        for (std::size_t r = 0; r < s.fanout; ++r) acc += grp[r];
        acc /= static_cast<double>(s.fanout);
        break;
      case VarianceMode::kMax:
        for (std::size_t r = 0; r < s.fanout; ++r) acc = std::max(acc, grp[r]);
        break;
      case VarianceMode::kNorm:
        for (std::size_t r = 0; r < s.fanout; ++r) acc += grp[r] * grp[r];
        acc = std::sqrt(acc);
        break;
    }
    out[i] = acc;
  }
  return out;
}

// m_i += mean_variance - alpha * variance_i. Low-variance (stable) features
// gain logit mass, high-variance ones lose it. No-op during warm-up; returns
// whether the update was applied.
inline bool mask_update(MaskState& s) {
  if (s.epochs_seen <= s.e_init) return false;
  const std::vector<double> fv = feature_variance(s);
  double mean = 0.0;
  for (double v : fv) mean += v;
  mean /= static_cast<double>(s.features);
  for (std::size_t i = 0; i < s.features; ++i) {
    s.m[i] += mean - s.alpha * fv[i];
  }
  return true;
}

// z_i = sigmoid(m_i) * x_i; bypass leaves the input untouched (used by the
// mask-ablation variant and by reference-loss checks).
inline GatedInput gate(const MaskState& s, std::span<const double> x,
                       bool bypass = false) {
  if (x.size() != s.features) {
    throw std::invalid_argument("gate: expected " +
                                std::to_string(s.features) + " features, got " +
                                std::to_string(x.size()));
  }
  GatedInput out;
  out.z.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.z[i] = bypass ? x[i] : sigmoid(s.m[i]) * x[i];
  }
  return out;
}

inline std::vector<double> gate_values(const MaskState& s,
                                       bool bypass = false) {
  std::vector<double> g(s.features, 1.0);
  if (!bypass) {
    for (std::size_t i = 0; i < s.features; ++i) g[i] = sigmoid(s.m[i]);
  }
  return g;
}

// Sample-count-weighted average of client mask logits, summed in the given
// (fixed) order. The caller broadcasts the result back into client states.
inline std::vector<double> aggregate_masks(
    const std::vector<std::pair<const MaskState*, std::size_t>>& entries,
    std::size_t total_samples) {
  if (entries.empty() || total_samples == 0) {
    throw std::invalid_argument("aggregate_masks: no clients or zero samples");
  }
  std::size_t check = 0;
  const std::size_t features = entries.front().first->features;
  std::vector<double> out(features, 0.0);
  for (const auto& [state, n_k] : entries) {
    if (state->features != features) {
      throw std::invalid_argument("aggregate_masks: mask size mismatch");
    }
    const double w = static_cast<double>(n_k) / static_cast<double>(total_samples);
    for (std::size_t i = 0; i < features; ++i) out[i] += w * state->m[i];
    check += n_k;
  }
  if (check != total_samples) {
    throw std::invalid_argument("aggregate_masks: client counts do not sum to total");
  }
  return out;
}

}  // namespace fedlab
