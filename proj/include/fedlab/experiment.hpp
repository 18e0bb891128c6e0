#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedlab/config.hpp"
#include "fedlab/datasets.hpp"
#include "fedlab/fedcore.hpp"

namespace fedlab {

inline constexpr const char* kMetricsHeader =
    "round,algorithm,train_accuracy,test_accuracy,loss_loc,loss_l1,loss_pen,"
    "B_est,eps_est,bound_satisfied,wallclock_ms";

// Guards an output directory against concurrent writers for the lifetime of
// one command. A stale lock (crashed run) must be removed by hand.
class Lockfile {
 public:
  explicit Lockfile(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir.string());
    if (std::filesystem::exists(path_)) {
      throw std::runtime_error("output directory is locked by another run: " +
                               path_.string());
    }
    std::ofstream out(path_);
    if (!out) throw std::runtime_error("cannot create lockfile " + path_.string());
    out << "locked\n";
  }
  ~Lockfile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  Lockfile(const Lockfile&) = delete;
  Lockfile& operator=(const Lockfile&) = delete;

 private:
  std::filesystem::path path_;
};

namespace detail {

inline std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string metrics_row(const RoundReport& r, const std::string& algorithm) {
  std::ostringstream os;
  os << r.round << ',' << algorithm << ',' << fmt_metric(r.train_accuracy) << ','
     << fmt_metric(r.test_accuracy) << ',' << fmt_metric(r.loss_loc) << ','
     << fmt_metric(r.loss_l1) << ',' << fmt_metric(r.loss_pen) << ',';
  if (r.theory) {
    os << (r.b_defined ? fmt_metric(r.b_est) : "undefined") << ','
       << (r.eps_defined ? fmt_metric(r.eps_est) : "undefined") << ',';
    os << (r.bound_checked ? (r.bound_satisfied ? "true" : "false") : "");
  } else {
    os << ",,";
  }
  os << ',' << r.clock_ms;
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_checkpoint(const std::filesystem::path& path, std::size_t round,
                             const ModelParams& params,
                             const std::vector<double>& mask_logits) {
  std::ostringstream os;
  os << "round = " << round << '\n';
  os << "layer_dims = " << fmt_list(params.layer_dims) << '\n';
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    os << "weights" << l << " = " << fmt_list(params.weights[l].data) << '\n';
    os << "biases" << l << " = " << fmt_list(params.biases[l].data) << '\n';
  }
  if (!mask_logits.empty()) {
    os << "mask_logits = " << fmt_list(mask_logits) << '\n';
  }
  write_text(path, os.str());
}

}  // namespace detail

// Builds (train environments, test environment) from the config: synthetic
// generation by default, CSV ingestion when file paths are configured.
inline std::pair<std::vector<Environment>, Environment> environments_from_config(
    const ExperimentConfig& cfg) {
  if (cfg.use_csv) {
    std::vector<Environment> train;
    for (std::size_t i = 0; i < cfg.train_csv.size(); ++i) {
      const double alpha =
          i < cfg.data.train_alphas.size() ? cfg.data.train_alphas[i] : -1.0;
      train.push_back(
          load_csv(cfg.train_csv[i], cfg.label_column, cfg.csv_spurious_idx, alpha));
    }
    Environment test =
        load_csv(cfg.test_csv, cfg.label_column, cfg.csv_spurious_idx, cfg.data.test_alpha);
    return {std::move(train), std::move(test)};
  }
  std::vector<Environment> envs = gen_synthetic(cfg.data);
  Environment test = std::move(envs.back());
  envs.pop_back();
  return {std::move(envs), std::move(test)};
}

// Executes one training run and writes metrics.csv, masks.csv and the
// resolved config into the output directory.
inline RunResult cmd_run(const ExperimentConfig& cfg) {
  const std::filesystem::path dir(cfg.output_dir);
  Lockfile lock(dir);
  detail::write_text(dir / "config_resolved.cfg", resolved_config_text(cfg));

  auto [train_envs, test_env] = environments_from_config(cfg);

  RunConfig run = cfg.run;
  run.eta = resolved_eta(cfg, run.algorithm);
  const std::string algo = algorithm_name(run.algorithm);
  RoundCallback callback = [&](const RoundReport& r, const ModelParams& params,
                               const std::vector<double>& mask) {
    if (cfg.checkpoint_every > 0 && r.round % cfg.checkpoint_every == 0) {
      detail::write_checkpoint(
          dir / ("checkpoint_round_" + std::to_string(r.round) + ".txt"), r.round,
          params, mask);
    }
  };

  RunResult result = run_training(run, train_envs, test_env, callback);

  // written after the run so the post-hoc descent verdicts are present
  std::ofstream metrics(dir / "metrics.csv");
  if (!metrics) throw std::runtime_error("cannot write metrics.csv in " + cfg.output_dir);
  metrics << kMetricsHeader << '\n';
  for (const RoundReport& r : result.reports) {
    metrics << detail::metrics_row(r, algo) << '\n';
  }

  std::ofstream masks(dir / "masks.csv");
  if (!masks) throw std::runtime_error("cannot write masks.csv in " + cfg.output_dir);
  masks << "client,feature,mask_logit,gate\n";
  if (cfg.run.algorithm == Algorithm::kFedGen) {
    for (std::size_t k = 0; k < result.client_masks.size(); ++k) {
      const MaskState& m = result.client_masks[k];
      for (std::size_t i = 0; i < m.features; ++i) {
        masks << k << ',' << i << ',' << detail::fmt_metric(m.m[i]) << ','
              << detail::fmt_metric(sigmoid(m.m[i])) << '\n';
      }
    }
    for (std::size_t i = 0; i < result.global_mask.size(); ++i) {
      masks << "aggregate," << i << ',' << detail::fmt_metric(result.global_mask[i])
            << ',' << detail::fmt_metric(sigmoid(result.global_mask[i])) << '\n';
    }
  }
  return result;
}

// Writes one CSV per generated environment plus a manifest with the
// generation metadata.
inline void cmd_gendata(const ExperimentConfig& cfg) {
  if (cfg.use_csv) throw ConfigError("gen-data requires a synthetic data section");
  const std::filesystem::path dir(cfg.output_dir);
  Lockfile lock(dir);

  const std::vector<Environment> envs = gen_synthetic(cfg.data);
  std::ostringstream manifest;
  manifest << "seed = " << cfg.data.seed << '\n';
  manifest << "classes = " << cfg.data.classes << '\n';
  manifest << "invariant_features = " << cfg.data.invariant_features << '\n';
  manifest << "spurious_features = " << cfg.data.spurious_features << '\n';
  manifest << "label_noise = " << detail::fmt_double(cfg.data.label_noise) << '\n';
  manifest << "samples_per_env = " << cfg.data.samples_per_env << '\n';
  manifest << "environments = " << envs.size() << '\n';
  for (std::size_t e = 0; e < envs.size(); ++e) {
    const std::string file = envs[e].env_id + ".csv";
    save_csv(envs[e], (dir / file).string());
    manifest << "env" << e << ".file = " << file << '\n';
    manifest << "env" << e << ".alpha = " << detail::fmt_double(envs[e].alpha) << '\n';
    manifest << "env" << e << ".spurious_idx = " << detail::fmt_list(envs[e].spurious_idx)
             << '\n';
  }
  detail::write_text(dir / "manifest.cfg", manifest.str());
}

struct SweepRow {
  std::string algorithm;
  std::size_t local_epochs = 0;
  std::size_t rounds_run = 0;
  double final_train_accuracy = 0.0;
  double final_test_accuracy = 0.0;
};

// Runs each (algorithm, E) pair on identical data and seed; per-run outputs
// land in subdirectories, final accuracies in summary.csv.
inline std::vector<SweepRow> cmd_sweep_epochs(const ExperimentConfig& base,
                                              const std::vector<std::size_t>& epoch_list,
                                              const std::vector<Algorithm>& algorithms) {
  if (epoch_list.empty()) throw ConfigError("sweep-epochs: empty epoch list");
  if (algorithms.empty()) throw ConfigError("sweep-epochs: empty algorithm list");
  const std::filesystem::path dir(base.output_dir);
  {
    Lockfile lock(dir);
    detail::write_text(dir / "config_resolved.cfg", resolved_config_text(base));
  }

  std::vector<SweepRow> rows;
  for (Algorithm algo : algorithms) {
    for (std::size_t epochs : epoch_list) {
      ExperimentConfig cfg = base;
      cfg.run.algorithm = algo;
      cfg.run.local_epochs = epochs;
      cfg.output_dir = (dir / (std::string(algorithm_name(algo)) + "_E" +
                               std::to_string(epochs)))
                           .string();
      const RunResult result = cmd_run(cfg);
      SweepRow row;
      row.algorithm = algorithm_name(algo);
      row.local_epochs = epochs;
      row.rounds_run = result.rounds_run;
      row.final_train_accuracy = result.reports.back().train_accuracy;
      row.final_test_accuracy = result.reports.back().test_accuracy;
      rows.push_back(row);
    }
  }

  std::ostringstream os;
  os << "algorithm,local_epochs,rounds_run,final_train_accuracy,final_test_accuracy\n";
  for (const SweepRow& r : rows) {
    os << r.algorithm << ',' << r.local_epochs << ',' << r.rounds_run << ','
       << detail::fmt_metric(r.final_train_accuracy) << ','
       << detail::fmt_metric(r.final_test_accuracy) << '\n';
  }
  detail::write_text(dir / "summary.csv", os.str());
  return rows;
}

struct AblationRow {
  std::string variant;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Full FedGen against the three single-component removals, identical data
// and seed. Requires a fedgen base config.
inline std::vector<AblationRow> cmd_ablate(const ExperimentConfig& base) {
  if (base.run.algorithm != Algorithm::kFedGen) {
    throw ConfigError("ablate requires run.algorithm = fedgen");
  }
  const std::filesystem::path dir(base.output_dir);
  {
    Lockfile lock(dir);
    detail::write_text(dir / "config_resolved.cfg", resolved_config_text(base));
  }

  struct Variant {
    const char* name;
    AblationFlags flags;
  };
  const Variant variants[] = {
      {"full", {}},
      {"no_scaling", {.disable_scaling = true}},
      {"no_mask", {.disable_mask = true}},
      {"no_penalty", {.disable_penalty = true}},
  };

  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    ExperimentConfig cfg = base;
    cfg.run.ablation = v.flags;
    cfg.output_dir = (dir / v.name).string();
    const RunResult result = cmd_run(cfg);
    rows.push_back({v.name, result.reports.back().train_accuracy,
                    result.reports.back().test_accuracy});
  }

  std::ostringstream os;
  os << "variant,train_accuracy,test_accuracy\n";
  for (const AblationRow& r : rows) {
    os << r.variant << ',' << detail::fmt_metric(r.train_accuracy) << ','
       << detail::fmt_metric(r.test_accuracy) << '\n';
  }
  detail::write_text(dir / "ablation.csv", os.str());
  return rows;
}

}  // namespace fedlab
