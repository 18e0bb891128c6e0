#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedlab/datasets.hpp"
#include "fedlab/masking.hpp"
#include "fedlab/model.hpp"
#include "fedlab/rng.hpp"
#include "fedlab/theory.hpp"

namespace fedlab {

enum class Algorithm { kFedAvg, kFedProx, kFedGen, kErm, kInvFedAvg };

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "fedavg") return Algorithm::kFedAvg;
  if (s == "fedprox") return Algorithm::kFedProx;
  if (s == "fedgen") return Algorithm::kFedGen;
  if (s == "erm") return Algorithm::kErm;
  if (s == "inv-fedavg") return Algorithm::kInvFedAvg;
  throw std::invalid_argument("unknown algorithm: " + s);
}

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kFedAvg: return "fedavg";
    case Algorithm::kFedProx: return "fedprox";
    case Algorithm::kFedGen: return "fedgen";
    case Algorithm::kErm: return "erm";
    case Algorithm::kInvFedAvg: return "inv-fedavg";
  }
  return "?";
}

struct AblationFlags {
  bool disable_scaling = false;  // mask-update scaling factor forced to 1
  bool disable_mask = false;     // gating bypassed entirely
  bool disable_penalty = false;  // lambda forced to 0
};

struct RunConfig {
  Algorithm algorithm = Algorithm::kFedAvg;
  std::size_t clients = 10;
  double client_fraction = 1.0;
  std::size_t rounds = 30;
  std::size_t local_epochs = 40;
  double eta = 0.001;
  double lambda = 1.0;
  double l1_weight = 1e-6;
  double mu = 1e-3;  // FedProx proximal weight
  double mask_alpha = 10.0;
  double mask_beta = 0.1;
  double mask_delta = 0.9;
  int warmup_epochs = 5;
  VarianceMode variance_mode = VarianceMode::kMean;
  std::size_t batch_size = 64;
  std::uint64_t seed = 7;
  AblationFlags ablation;
  std::vector<std::size_t> hidden_dims = {50, 50};
  PartitionScheme partition = PartitionScheme::kStratified;
  int early_stop_patience = 10;  // consecutive test-loss increases; 0 = off
  bool theory_checks = false;
  double smoothness_L = 0.0;  // 0 = estimate from the logged trajectory
};

inline void validate(const RunConfig& cfg) {
  if (cfg.clients < 1) throw std::invalid_argument("config: clients must be >= 1");
  if (!(cfg.client_fraction > 0.0 && cfg.client_fraction <= 1.0)) {
    throw std::invalid_argument("config: client_fraction must be in (0,1]");
  }
  if (cfg.rounds < 1 || cfg.local_epochs < 1) {
    throw std::invalid_argument("config: rounds and local_epochs must be >= 1");
  }
  if (!(cfg.eta > 0.0)) throw std::invalid_argument("config: eta must be > 0");
  if (cfg.lambda < 0.0 || cfg.mu < 0.0 || cfg.l1_weight < 0.0) {
    throw std::invalid_argument("config: lambda, mu, l1_weight must be >= 0");
  }
  if (cfg.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (!(cfg.mask_alpha > 0.0)) throw std::invalid_argument("config: mask alpha must be > 0");
}

struct ClientState {
  std::size_t id = 0;
  Environment shard;
  std::size_t n_k = 0;
  ModelParams params;
  MaskState mask;
};

// Uniform sample without replacement of ceil(fraction*K) ids, ascending.
inline std::vector<std::size_t> sample_clients(Rng& rng, std::size_t num_clients,
                                               double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("sample_clients: fraction must be in (0,1]");
  }
  const std::size_t take = std::min(
      num_clients,
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(num_clients))));
  std::vector<std::size_t> ids(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) ids[i] = i;
  if (take == num_clients) return ids;
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(ids[i], ids[i + rng.below(num_clients - i)]);
  }
  ids.resize(take);
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace detail {

inline constexpr std::uint64_t kShuffleTag = 0x73687566ULL;

inline void gather_batch(const Environment& shard,
                         const std::vector<std::size_t>& order,
                         std::size_t begin, std::size_t end,
                         std::vector<double>& xs, std::vector<int>& ys) {
  const std::size_t j = shard.num_features;
  xs.resize((end - begin) * j);
  ys.resize(end - begin);
  for (std::size_t b = begin; b < end; ++b) {
    const auto row = shard.row(order[b]);
    std::copy(row.begin(), row.end(), xs.begin() + (b - begin) * j);
    ys[b - begin] = shard.y[order[b]];
  }
}

inline std::vector<std::size_t> epoch_order(const Environment& shard,
                                            std::uint64_t seed, std::size_t client,
                                            std::size_t round, std::size_t epoch) {
  std::vector<std::size_t> order(shard.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed({seed, kShuffleTag, client, round, epoch}));
  rng.shuffle(order);
  return order;
}

}  // namespace detail

// E epochs of mini-batch SGD on the plain ERM loss, starting from the
// broadcast model. eta == 0 short-circuits the step and returns the
// broadcast unchanged.
inline ModelParams client_update_fedavg(const ClientState& client,
                                        const ModelParams& broadcast,
                                        std::size_t epochs, double eta,
                                        std::size_t batch_size,
                                        std::uint64_t seed, std::size_t round) {
  ModelParams params = broadcast;
  std::vector<double> xs;
  std::vector<int> ys;
  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto order = detail::epoch_order(client.shard, seed, client.id, round, e);
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
      const std::size_t end = std::min(order.size(), b + batch_size);
      detail::gather_batch(client.shard, order, b, end, xs, ys);
      const LossGraph lg = erm_loss(params, xs, ys);
      if (eta > 0.0) {
        const ModelGrads grads = extract_grads(lg, lg.graph.backward(lg.total_node));
        sgd_step(params, grads, eta);
      }
    }
  }
  return params;
}

// FedAvg plus the proximal pull toward the broadcast model: the loss gains
// (mu/2)||w - w_t||^2, i.e. every gradient gains mu*(w - w_t).
inline ModelParams client_update_fedprox(const ClientState& client,
                                         const ModelParams& broadcast,
                                         std::size_t epochs, double eta, double mu,
                                         std::size_t batch_size,
                                         std::uint64_t seed, std::size_t round) {
  if (mu < 0.0) throw std::invalid_argument("fedprox: mu must be >= 0");
  ModelParams params = broadcast;
  std::vector<double> xs;
  std::vector<int> ys;
  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto order = detail::epoch_order(client.shard, seed, client.id, round, e);
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
      const std::size_t end = std::min(order.size(), b + batch_size);
      detail::gather_batch(client.shard, order, b, end, xs, ys);
      const LossGraph lg = erm_loss(params, xs, ys);
      if (eta > 0.0) {
        ModelGrads grads = extract_grads(lg, lg.graph.backward(lg.total_node));
        for (std::size_t l = 0; l < params.num_layers(); ++l) {
          for (std::size_t i = 0; i < params.weights[l].data.size(); ++i) {
            grads.weights[l].data[i] +=
                mu * (params.weights[l].data[i] - broadcast.weights[l].data[i]);
          }
          for (std::size_t i = 0; i < params.biases[l].data.size(); ++i) {
            grads.biases[l].data[i] +=
                mu * (params.biases[l].data[i] - broadcast.biases[l].data[i]);
          }
        }
        sgd_step(params, grads, eta);
      }
    }
  }
  return params;
}

struct FedGenUpdate {
  ModelParams params;
  MaskState mask;
};

// The masked local update: every batch descends the three-part loss on
// gated inputs; after the last batch of each epoch the weight statistics
// advance, and past warm-up the mask logits move by the variance rule.
inline FedGenUpdate client_update_fedgen(
    const ClientState& client, const ModelParams& broadcast,
    const std::vector<double>& broadcast_mask, std::size_t epochs, double eta,
    double lambda, double l1_weight, std::size_t batch_size,
    const AblationFlags& ablation, std::uint64_t seed, std::size_t round) {
  FedGenUpdate out{broadcast, client.mask};
  if (broadcast_mask.size() != out.mask.features) {
    throw std::invalid_argument("fedgen: broadcast mask size mismatch");
  }
  out.mask.m = broadcast_mask;  // server consensus overwrites local logits
  if (ablation.disable_scaling) out.mask.alpha = 1.0;
  const double lam = ablation.disable_penalty ? 0.0 : lambda;

  std::vector<double> xs;
  std::vector<int> ys;
  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto order = detail::epoch_order(client.shard, seed, client.id, round, e);
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
      const std::size_t end = std::min(order.size(), b + batch_size);
      detail::gather_batch(client.shard, order, b, end, xs, ys);
      const LossGraph lg = fedgen_loss(out.params, xs, ys, out.mask, lam,
                                       l1_weight, ablation.disable_mask);
      if (eta > 0.0) {
        const ModelGrads grads = extract_grads(lg, lg.graph.backward(lg.total_node));
        sgd_step(out.params, grads, eta);
      }
    }
    ema_update(out.mask, first_layer_by_feature(out.params));
    mask_update(out.mask);
  }
  return out;
}

// Sample-count-weighted elementwise average, accumulated in entry order.
inline ModelParams aggregate_weights(
    const std::vector<std::pair<const ModelParams*, std::size_t>>& entries,
    std::size_t total) {
  if (entries.empty() || total == 0) {
    throw std::invalid_argument("aggregate_weights: no clients or zero samples");
  }
  const ModelParams& first = *entries.front().first;
  ModelParams out;
  out.layer_dims = first.layer_dims;
  for (std::size_t l = 0; l < first.num_layers(); ++l) {
    out.weights.push_back(Tensor::zeros(first.weights[l].shape));
    out.biases.push_back(Tensor::zeros(first.biases[l].shape));
  }
  std::size_t check = 0;
  for (const auto& [params, n_k] : entries) {
    if (params->layer_dims != first.layer_dims) {
      throw std::invalid_argument("aggregate_weights: layer shape mismatch");
    }
    const double w = static_cast<double>(n_k) / static_cast<double>(total);
    for (std::size_t l = 0; l < out.num_layers(); ++l) {
      for (std::size_t i = 0; i < out.weights[l].data.size(); ++i) {
        out.weights[l].data[i] += w * params->weights[l].data[i];
      }
      for (std::size_t i = 0; i < out.biases[l].data.size(); ++i) {
        out.biases[l].data[i] += w * params->biases[l].data[i];
      }
    }
    check += n_k;
  }
  if (check != total) {
    throw std::invalid_argument("aggregate_weights: client counts do not sum to total");
  }
  return out;
}

struct EvalResult {
  double accuracy = 0.0;
  double mean_ce = 0.0;
};

inline double cross_entropy(const std::vector<double>& logits, int target) {
  return detail::log_sum_exp(logits) - logits[static_cast<std::size_t>(target)];
}

// Accuracy and mean cross-entropy of a model on an environment, with inputs
// gated by sigmoid(mask) when gates are supplied.
inline EvalResult evaluate_model(const ModelParams& p, const Environment& env,
                                 const std::vector<double>* gates) {
  EvalResult out;
  if (env.size() == 0) return out;
  std::vector<double> z(env.num_features);
  std::size_t correct = 0;
  double ce = 0.0;
  for (std::size_t r = 0; r < env.size(); ++r) {
    const auto row = env.row(r);
    for (std::size_t i = 0; i < env.num_features; ++i) {
      z[i] = gates ? (*gates)[i] * row[i] : row[i];
    }
    const std::vector<double> logits = forward(p, z);
    int best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c) {
      if (logits[c] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    }
    if (best == env.y[r]) ++correct;
    ce += cross_entropy(logits, env.y[r]);
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(env.size());
  out.mean_ce = ce / static_cast<double>(env.size());
  return out;
}

struct RoundReport {
  std::size_t round = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double loss_loc = 0.0;
  double loss_l1 = 0.0;
  double loss_pen = 0.0;
  double test_loss = 0.0;
  std::uint64_t clock_ms = 0;
  bool theory = false;
  double b_est = 0.0;
  bool b_defined = false;
  double eps_est = 0.0;
  bool eps_defined = false;
  double grad_norm_sq = 0.0;
  double objective = 0.0;
  bool bound_checked = false;
  bool bound_satisfied = false;
  double rho = 0.0;
  double decrease_observed = 0.0;
  double decrease_bound = 0.0;
};

struct RunResult {
  std::vector<RoundReport> reports;
  ModelParams global;
  std::vector<double> global_mask;      // final aggregated logits (fedgen)
  std::vector<MaskState> client_masks;  // final local states (fedgen)
  std::optional<DescentSummary> theory;
  std::size_t rounds_run = 0;
  bool stopped_early = false;
};

using RoundCallback =
    std::function<void(const RoundReport&, const ModelParams&, const std::vector<double>&)>;

namespace detail {

inline std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  for (const Tensor& t : p.weights) out.insert(out.end(), t.data.begin(), t.data.end());
  for (const Tensor& t : p.biases) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

inline std::vector<double> flatten(const ModelGrads& g) {
  std::vector<double> out;
  for (const Tensor& t : g.weights) out.insert(out.end(), t.data.begin(), t.data.end());
  for (const Tensor& t : g.biases) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

// Full-batch (objective value, flat gradient) of one client's local loss at
// the given global point.
inline std::pair<double, std::vector<double>> client_objective_gradient(
    const RunConfig& cfg, const ClientState& client, const ModelParams& params,
    const std::vector<double>& mask_logits) {
  std::vector<double> xs(client.shard.x);
  std::vector<int> ys(client.shard.y);
  LossGraph lg;
  if (cfg.algorithm == Algorithm::kFedGen) {
    MaskState view = client.mask;
    view.m = mask_logits;
    const double lam = cfg.ablation.disable_penalty ? 0.0 : cfg.lambda;
    lg = fedgen_loss(params, xs, ys, view, lam, cfg.l1_weight,
                     cfg.ablation.disable_mask);
  } else {
    // the proximal term vanishes at the broadcast point, so plain ERM is the
    // local objective for every non-masked algorithm here
    lg = erm_loss(params, xs, ys);
  }
  const double value = lg.parts.total;
  const ModelGrads grads = extract_grads(lg, lg.graph.backward(lg.total_node));
  return {value, flatten(grads)};
}

}  // namespace detail

// Weighted-average dissimilarity estimate over the clients' full-batch local
// gradients at the given global point. Degenerate global gradients yield an
// empty optional (the "undefined" marker).
inline std::optional<double> estimate_b(const RunConfig& cfg,
                                        const std::vector<ClientState>& clients,
                                        const ModelParams& params,
                                        const std::vector<double>& mask_logits) {
  std::vector<std::vector<double>> grads;
  std::vector<std::size_t> counts;
  for (const ClientState& c : clients) {
    grads.push_back(detail::client_objective_gradient(cfg, c, params, mask_logits).second);
    counts.push_back(c.n_k);
  }
  const GradientStats stats = gradient_stats(grads, counts);
  if (!stats.b_defined) return std::nullopt;
  return stats.b_est;
}

inline std::optional<double> estimate_eps(const RunConfig& cfg,
                                          const std::vector<ClientState>& clients,
                                          const ModelParams& params,
                                          const std::vector<double>& mask_logits) {
  std::vector<std::vector<double>> grads;
  std::vector<std::size_t> counts;
  for (const ClientState& c : clients) {
    grads.push_back(detail::client_objective_gradient(cfg, c, params, mask_logits).second);
    counts.push_back(c.n_k);
  }
  const GradientStats stats = gradient_stats(grads, counts);
  if (!stats.eps_defined) return std::nullopt;
  return stats.eps_est;
}

// The federated round engine. Drives T rounds of sample/broadcast/local
// update/aggregate for the federated algorithms; "erm" collapses to one
// pooled client so the same loop trains the centralized baseline for T*E
// epochs; "inv-fedavg" is fedavg on spurious-stripped data. Reports one row
// per round and optionally replays the descent theory over the trajectory.
inline RunResult run_training(const RunConfig& cfg,
                              const std::vector<Environment>& train_envs,
                              const Environment& test_env,
                              const RoundCallback& callback = {}) {
  validate(cfg);
  if (train_envs.empty()) throw std::invalid_argument("run_training: no training data");

  const bool is_fedgen = cfg.algorithm == Algorithm::kFedGen;
  const bool strip = cfg.algorithm == Algorithm::kInvFedAvg;
  const bool pooled = cfg.algorithm == Algorithm::kErm;

  std::vector<Environment> envs = train_envs;
  Environment test = test_env;
  if (strip) {
    for (Environment& e : envs) e = strip_spurious(e);
    test = strip_spurious(test);
  }

  const std::size_t num_clients = pooled ? 1 : cfg.clients;
  std::vector<Environment> shards = partition_clients(envs, num_clients, cfg.partition);

  const std::size_t j = shards.front().num_features;
  int max_label = 0;
  for (const Environment& e : envs) {
    for (int y : e.y) max_label = std::max(max_label, y);
  }
  for (int y : test.y) max_label = std::max(max_label, y);
  const std::size_t classes = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);

  std::vector<std::size_t> dims;
  dims.push_back(j);
  for (std::size_t h : cfg.hidden_dims) dims.push_back(h);
  dims.push_back(classes);
  const std::size_t fanout = dims[1];

  // pooled training view for reporting
  Environment pooled_train;
  pooled_train.num_features = j;
  pooled_train.env_id = "pooled";
  pooled_train.spurious_idx = envs.front().spurious_idx;
  for (const Environment& e : envs) {
    pooled_train.x.insert(pooled_train.x.end(), e.x.begin(), e.x.end());
    pooled_train.y.insert(pooled_train.y.end(), e.y.begin(), e.y.end());
  }

  ModelParams global = init_params(cfg.seed, dims);
  std::vector<double> global_mask(j, 1.0);

  std::vector<ClientState> clients;
  std::size_t total_samples = 0;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    ClientState c;
    c.id = k;
    c.n_k = shards[k].size();
    c.shard = std::move(shards[k]);
    c.params = global;
    if (is_fedgen) {
      c.mask = init_mask(j, fanout, cfg.ablation.disable_scaling ? 1.0 : cfg.mask_alpha,
                         cfg.mask_beta, cfg.mask_delta, cfg.warmup_epochs);
      c.mask.variance_mode = cfg.variance_mode;
    }
    total_samples += c.n_k;
    clients.push_back(std::move(c));
  }

  Rng sampler(mix_seed({cfg.seed, 0x73616d70ULL}));

  std::vector<TheoryPoint> theory_points;
  std::vector<std::vector<double>> theory_params, theory_grads;
  auto record_theory = [&]() {
    double objective = 0.0;
    std::vector<std::vector<double>> grads;
    std::vector<std::size_t> counts;
    for (const ClientState& c : clients) {
      auto [value, grad] = detail::client_objective_gradient(cfg, c, global, global_mask);
      objective += static_cast<double>(c.n_k) / static_cast<double>(total_samples) * value;
      grads.push_back(std::move(grad));
      counts.push_back(c.n_k);
    }
    const GradientStats stats = gradient_stats(grads, counts);
    TheoryPoint pt;
    pt.objective = objective;
    pt.grad_norm_sq = stats.grad_norm_sq;
    pt.b_est = stats.b_est;
    pt.b_defined = stats.b_defined;
    pt.eps_est = stats.eps_est;
    pt.eps_defined = stats.eps_defined;
    theory_points.push_back(pt);
    theory_params.push_back(detail::flatten(global));
    theory_grads.push_back(stats.mean_grad);
  };
  if (cfg.theory_checks) record_theory();

  RunResult result;
  std::uint64_t clock_ms = 0;
  int rising_test_loss = 0;
  double prev_test_loss = 0.0;

  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    const std::vector<std::size_t> sampled =
        sample_clients(sampler, num_clients, cfg.client_fraction);

    std::uint64_t round_steps = 0;
    std::size_t sampled_total = 0;
    try {
      for (std::size_t k : sampled) {
        ClientState& c = clients[k];
        switch (cfg.algorithm) {
          case Algorithm::kFedProx:
            c.params = client_update_fedprox(c, global, cfg.local_epochs, cfg.eta,
                                             cfg.mu, cfg.batch_size, cfg.seed, round);
            break;
          case Algorithm::kFedGen: {
            FedGenUpdate up = client_update_fedgen(
                c, global, global_mask, cfg.local_epochs, cfg.eta, cfg.lambda,
                cfg.l1_weight, cfg.batch_size, cfg.ablation, cfg.seed, round);
            c.params = std::move(up.params);
            c.mask = std::move(up.mask);
            break;
          }
          default:
            c.params = client_update_fedavg(c, global, cfg.local_epochs, cfg.eta,
                                            cfg.batch_size, cfg.seed, round);
        }
        const std::uint64_t batches = (c.n_k + cfg.batch_size - 1) / cfg.batch_size;
        round_steps = std::max(round_steps, cfg.local_epochs * batches);
        sampled_total += c.n_k;
      }

      std::vector<std::pair<const ModelParams*, std::size_t>> entries;
      for (std::size_t k : sampled) entries.emplace_back(&clients[k].params, clients[k].n_k);
      global = aggregate_weights(entries, sampled_total);

      if (is_fedgen) {
        std::vector<std::pair<const MaskState*, std::size_t>> mask_entries;
        for (std::size_t k : sampled) mask_entries.emplace_back(&clients[k].mask, clients[k].n_k);
        global_mask = aggregate_masks(mask_entries, sampled_total);
        for (std::size_t k : sampled) clients[k].mask.m = global_mask;
      }
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("training aborted at round " + std::to_string(round) +
                               ": " + e.what());
    }

    if (cfg.theory_checks) record_theory();

    // simulated parallel clock: one local mini-batch step = 1 ms
    clock_ms += round_steps;

    std::vector<double> gates;
    if (is_fedgen) {
      gates.assign(j, 1.0);
      if (!cfg.ablation.disable_mask) {
        for (std::size_t i = 0; i < j; ++i) gates[i] = sigmoid(global_mask[i]);
      }
    }
    const std::vector<double>* gate_ptr = is_fedgen ? &gates : nullptr;

    RoundReport report;
    report.round = round;
    report.clock_ms = clock_ms;
    const EvalResult train_eval = evaluate_model(global, pooled_train, gate_ptr);
    const EvalResult test_eval = evaluate_model(global, test, gate_ptr);
    report.train_accuracy = train_eval.accuracy;
    report.test_accuracy = test_eval.accuracy;
    report.test_loss = test_eval.mean_ce;
    report.loss_loc = train_eval.mean_ce;
    if (is_fedgen) {
      double l1 = 0.0;
      for (const Tensor& w : global.weights) {
        for (double v : w.data) l1 += std::abs(v);
      }
      report.loss_l1 = cfg.l1_weight * l1;
      if (!cfg.ablation.disable_penalty && cfg.lambda > 0.0) {
        double resid = 0.0;
        std::vector<double> z(j);
        for (std::size_t r = 0; r < pooled_train.size(); ++r) {
          const auto row = pooled_train.row(r);
          for (std::size_t i = 0; i < j; ++i) z[i] = gates[i] * row[i];
          const std::vector<double> logits = forward(global, z);
          const std::vector<double> probs = detail::stable_softmax(logits);
          double s = 0.0;
          for (std::size_t c2 = 0; c2 < logits.size(); ++c2) {
            const double h = static_cast<int>(c2) == pooled_train.y[r] ? 1.0 : 0.0;
            s += (probs[c2] - h) * logits[c2];
          }
          resid += s;
        }
        resid /= static_cast<double>(pooled_train.size());
        report.loss_pen = cfg.lambda * resid * resid;
      }
    }

    if (cfg.theory_checks) {
      const TheoryPoint& start = theory_points[theory_points.size() - 2];
      report.theory = true;
      report.b_est = start.b_est;
      report.b_defined = start.b_defined;
      report.eps_est = start.eps_est;
      report.eps_defined = start.eps_defined;
      report.grad_norm_sq = start.grad_norm_sq;
      report.objective = start.objective;
    }

    result.reports.push_back(report);
    result.rounds_run = round;
    if (callback) callback(report, global, global_mask);

    if (cfg.early_stop_patience > 0) {
      if (round > 1 && report.test_loss > prev_test_loss) {
        ++rising_test_loss;
      } else {
        rising_test_loss = 0;
      }
      prev_test_loss = report.test_loss;
      if (rising_test_loss >= cfg.early_stop_patience) {
        result.stopped_early = true;
        break;
      }
    } else {
      prev_test_loss = report.test_loss;
    }
  }

  if (cfg.theory_checks && theory_points.size() >= 2) {
    const double L = cfg.smoothness_L > 0.0
                         ? cfg.smoothness_L
                         : estimate_smoothness(theory_params, theory_grads);
    DescentSummary summary = descent_check(theory_points, cfg.eta, L);
    for (std::size_t i = 0; i < summary.rounds.size() && i < result.reports.size(); ++i) {
      result.reports[i].bound_checked = true;
      result.reports[i].bound_satisfied = summary.rounds[i].bound_satisfied;
      result.reports[i].rho = summary.rounds[i].rho;
      result.reports[i].decrease_observed = summary.rounds[i].decrease_observed;
      result.reports[i].decrease_bound = summary.rounds[i].decrease_bound;
    }
    result.theory = std::move(summary);
  }

  result.global = std::move(global);
  if (is_fedgen) {
    result.global_mask = std::move(global_mask);
    for (ClientState& c : clients) result.client_masks.push_back(std::move(c.mask));
  }
  return result;
}

}  // namespace fedlab
