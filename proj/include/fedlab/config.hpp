#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <type_traits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlab/datasets.hpp"
#include "fedlab/fedcore.hpp"

namespace fedlab {

// Configuration problems exit with status 1, runtime aborts with 2; the
// distinct type keeps them apart at the CLI boundary.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat key=value text with optional [section] headers and '#' comments.
// Typed getters consume keys so leftovers (typos) can be rejected.
class ConfigMap {
 public:
  static ConfigMap parse_string(const std::string& text, const std::string& origin) {
    ConfigMap cm;
    cm.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = trim(line.substr(0, line.find('#')));
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') {
          throw ConfigError(origin + ":" + std::to_string(line_no) +
                            ": malformed section header '" + t + "'");
        }
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      const std::size_t eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": expected key = value, got '" + t + "'");
      }
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
      }
      const std::string full = section.empty() ? key : section + "." + key;
      if (!cm.values_.emplace(full, value).second) {
        throw ConfigError(origin + ": duplicate key '" + full + "'");
      }
    }
    return cm;
  }

  static ConfigMap parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string require_string(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) {
      throw ConfigError(origin_ + ": missing required field '" + key + "'");
    }
    consumed_.insert(key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  double require_double(const std::string& key) { return to_double(key, require_string(key)); }

  double get_double(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    return to_double(key, require_string(key));
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) {
    if (!has(key)) return fallback;
    return to_size(key, require_string(key));
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const std::string s = require_string(key);
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": field '" + key + "' is not an integer: '" + s + "'");
    }
  }

  int get_int(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    const std::string s = require_string(key);
    try {
      return std::stoi(s);
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": field '" + key + "' is not an integer: '" + s + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const std::string s = require_string(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(origin_ + ": field '" + key + "' must be true or false, got '" + s + "'");
  }

  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const std::string& item : split_list(require_string(key))) {
      out.push_back(to_double(key, item));
    }
    return out;
  }

  std::vector<std::size_t> get_size_list(const std::string& key,
                                         const std::vector<std::size_t>& fallback) {
    if (!has(key)) return fallback;
    std::vector<std::size_t> out;
    for (const std::string& item : split_list(require_string(key))) {
      out.push_back(to_size(key, item));
    }
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key) {
    std::vector<std::string> out;
    if (!has(key)) return out;
    return split_list(require_string(key));
  }

  // Rejects keys nothing consumed; catches misspelled fields.
  void finish() const {
    for (const auto& [key, value] : values_) {
      if (!consumed_.count(key)) {
        throw ConfigError(origin_ + ": unknown field '" + key + "'");
      }
    }
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

 private:
  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string t = trim(item);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  double to_double(const std::string& key, const std::string& s) const {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
      throw ConfigError(origin_ + ": field '" + key + "' is not a number: '" + s + "'");
    }
    return v;
  }

  std::size_t to_size(const std::string& key, const std::string& s) const {
    try {
      const long long v = std::stoll(s);
      if (v < 0) throw std::out_of_range("negative");
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": field '" + key + "' is not a non-negative integer: '" +
                        s + "'");
    }
  }

  std::string origin_;
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

// Everything one experiment needs: training knobs, data source (synthetic
// spec or CSV paths), output location, theory flag, checkpoint cadence.
struct ExperimentConfig {
  RunConfig run;
  DatasetSpec data;
  // Optional per-algorithm learning-rate overrides (0 = use run.eta), the
  // same way rates are tuned per approach at hyperparameter-search time.
  double eta_fedavg = 0.0;
  double eta_fedprox = 0.0;
  double eta_fedgen = 0.0;
  double eta_erm = 0.0;
  double eta_inv_fedavg = 0.0;
  bool use_csv = false;
  std::vector<std::string> train_csv;
  std::string test_csv;
  std::string label_column = "label";
  std::vector<std::size_t> csv_spurious_idx;
  std::string output_dir = "out";
  std::size_t checkpoint_every = 0;
};

inline double resolved_eta(const ExperimentConfig& cfg, Algorithm algo) {
  double eta = 0.0;
  switch (algo) {
    case Algorithm::kFedAvg: eta = cfg.eta_fedavg; break;
    case Algorithm::kFedProx: eta = cfg.eta_fedprox; break;
    case Algorithm::kFedGen: eta = cfg.eta_fedgen; break;
    case Algorithm::kErm: eta = cfg.eta_erm; break;
    case Algorithm::kInvFedAvg: eta = cfg.eta_inv_fedavg; break;
  }
  return eta > 0.0 ? eta : cfg.run.eta;
}

inline ExperimentConfig load_experiment_config(ConfigMap& cm) {
  ExperimentConfig cfg;

  cfg.run.algorithm = parse_algorithm(cm.require_string("run.algorithm"));
  cfg.run.eta = cm.require_double("run.eta");
  cfg.eta_fedavg = cm.get_double("run.eta_fedavg", 0.0);
  cfg.eta_fedprox = cm.get_double("run.eta_fedprox", 0.0);
  cfg.eta_fedgen = cm.get_double("run.eta_fedgen", 0.0);
  cfg.eta_erm = cm.get_double("run.eta_erm", 0.0);
  cfg.eta_inv_fedavg = cm.get_double("run.eta_inv_fedavg", 0.0);
  cfg.run.seed = cm.get_u64("run.seed", 7);
  cfg.run.rounds = cm.get_size("run.rounds", 30);
  cfg.run.local_epochs = cm.get_size("run.local_epochs", 40);
  cfg.run.clients = cm.get_size("run.clients", 10);
  cfg.run.client_fraction = cm.get_double("run.client_fraction", 1.0);
  cfg.run.lambda = cm.get_double("run.lambda", 1.0);
  cfg.run.l1_weight = cm.get_double("run.l1_weight", 1e-6);
  cfg.run.mu = cm.get_double("run.mu", 1e-3);
  cfg.run.batch_size = cm.get_size("run.batch_size", 64);
  cfg.run.hidden_dims = cm.get_size_list("run.hidden", {50, 50});
  cfg.run.partition = parse_partition_scheme(cm.get_string("run.partition", "stratified"));
  cfg.run.early_stop_patience = cm.get_int("run.early_stop_patience", 10);
  cfg.run.ablation.disable_scaling = cm.get_bool("run.disable_scaling", false);
  cfg.run.ablation.disable_mask = cm.get_bool("run.disable_mask", false);
  cfg.run.ablation.disable_penalty = cm.get_bool("run.disable_penalty", false);

  cfg.run.mask_alpha = cm.get_double("masking.alpha", 10.0);
  cfg.run.mask_beta = cm.get_double("masking.beta", 0.1);
  cfg.run.mask_delta = cm.get_double("masking.delta", 0.9);
  cfg.run.warmup_epochs = cm.get_int("masking.e_init", 5);
  cfg.run.variance_mode =
      parse_variance_mode(cm.get_string("masking.variance_mode", "mean"));

  cfg.run.theory_checks = cm.get_bool("theory.enabled", false);
  cfg.run.smoothness_L = cm.get_double("theory.smoothness_l", 0.0);

  cfg.train_csv = cm.get_string_list("data.train_csv");
  cfg.use_csv = !cfg.train_csv.empty();
  if (cfg.use_csv) {
    cfg.test_csv = cm.require_string("data.test_csv");
    cfg.label_column = cm.get_string("data.label_column", "label");
    cfg.csv_spurious_idx = cm.get_size_list("data.spurious_idx", {});
    cfg.data.train_alphas =
        cm.get_double_list("data.train_alphas", std::vector<double>(cfg.train_csv.size(), -1.0));
    cfg.data.test_alpha = cm.get_double("data.test_alpha", -1.0);
  } else {
    cfg.data.invariant_features = cm.get_size("data.invariant_features", 10);
    cfg.data.spurious_features = cm.get_size("data.spurious_features", 1);
    cfg.data.classes = cm.get_size("data.classes", 2);
    cfg.data.train_alphas = cm.get_double_list("data.train_alphas", {0.8, 0.9});
    cfg.data.test_alpha = cm.get_double("data.test_alpha", 0.1);
    cfg.data.samples_per_env = cm.get_size("data.samples_per_env", 2000);
    cfg.data.label_noise = cm.get_double("data.label_noise", 0.1);
    cfg.data.seed = cm.get_u64("data.seed", 1);
  }

  cfg.output_dir = cm.get_string("output.dir", "out");
  cfg.checkpoint_every = cm.get_size("output.checkpoint_every", 0);

  cm.finish();
  try {
    validate(cfg.run);
    if (!cfg.use_csv) validate(cfg.data);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  ConfigMap cm = ConfigMap::parse_file(path);
  return load_experiment_config(cm);
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
inline std::string fmt_list(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    if constexpr (std::is_same_v<T, double>) {
      os << fmt_double(v[i]);
    } else {
      os << v[i];
    }
  }
  return os.str();
}

}  // namespace detail

// Serializes the fully resolved configuration (defaults included) so every
// run directory records exactly what produced it.
inline std::string resolved_config_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  const RunConfig& r = cfg.run;
  os << "[run]\n";
  os << "algorithm = " << algorithm_name(r.algorithm) << '\n';
  os << "eta = " << detail::fmt_double(r.eta) << '\n';
  if (cfg.eta_fedavg > 0.0) os << "eta_fedavg = " << detail::fmt_double(cfg.eta_fedavg) << '\n';
  if (cfg.eta_fedprox > 0.0) os << "eta_fedprox = " << detail::fmt_double(cfg.eta_fedprox) << '\n';
  if (cfg.eta_fedgen > 0.0) os << "eta_fedgen = " << detail::fmt_double(cfg.eta_fedgen) << '\n';
  if (cfg.eta_erm > 0.0) os << "eta_erm = " << detail::fmt_double(cfg.eta_erm) << '\n';
  if (cfg.eta_inv_fedavg > 0.0) {
    os << "eta_inv_fedavg = " << detail::fmt_double(cfg.eta_inv_fedavg) << '\n';
  }
  os << "seed = " << r.seed << '\n';
  os << "rounds = " << r.rounds << '\n';
  os << "local_epochs = " << r.local_epochs << '\n';
  os << "clients = " << r.clients << '\n';
  os << "client_fraction = " << detail::fmt_double(r.client_fraction) << '\n';
  os << "lambda = " << detail::fmt_double(r.lambda) << '\n';
  os << "l1_weight = " << detail::fmt_double(r.l1_weight) << '\n';
  os << "mu = " << detail::fmt_double(r.mu) << '\n';
  os << "batch_size = " << r.batch_size << '\n';
  os << "hidden = " << detail::fmt_list(r.hidden_dims) << '\n';
  os << "partition = "
     << (r.partition == PartitionScheme::kStratified ? "stratified" : "mixed") << '\n';
  os << "early_stop_patience = " << r.early_stop_patience << '\n';
  os << "disable_scaling = " << (r.ablation.disable_scaling ? "true" : "false") << '\n';
  os << "disable_mask = " << (r.ablation.disable_mask ? "true" : "false") << '\n';
  os << "disable_penalty = " << (r.ablation.disable_penalty ? "true" : "false") << '\n';
  os << "\n[masking]\n";
  os << "alpha = " << detail::fmt_double(r.mask_alpha) << '\n';
  os << "beta = " << detail::fmt_double(r.mask_beta) << '\n';
  os << "delta = " << detail::fmt_double(r.mask_delta) << '\n';
  os << "e_init = " << r.warmup_epochs << '\n';
  os << "variance_mode = "
     << (r.variance_mode == VarianceMode::kMean
             ? "mean"
             : r.variance_mode == VarianceMode::kMax ? "max" : "norm")
     << '\n';
  os << "\n[data]\n";
  if (cfg.use_csv) {
    os << "train_csv = " << detail::fmt_list(cfg.train_csv) << '\n';
    os << "test_csv = " << cfg.test_csv << '\n';
    os << "label_column = " << cfg.label_column << '\n';
    os << "spurious_idx = " << detail::fmt_list(cfg.csv_spurious_idx) << '\n';
    os << "train_alphas = " << detail::fmt_list(cfg.data.train_alphas) << '\n';
    os << "test_alpha = " << detail::fmt_double(cfg.data.test_alpha) << '\n';
  } else {
    os << "invariant_features = " << cfg.data.invariant_features << '\n';
    os << "spurious_features = " << cfg.data.spurious_features << '\n';
    os << "classes = " << cfg.data.classes << '\n';
    os << "train_alphas = " << detail::fmt_list(cfg.data.train_alphas) << '\n';
    os << "test_alpha = " << detail::fmt_double(cfg.data.test_alpha) << '\n';
    os << "samples_per_env = " << cfg.data.samples_per_env << '\n';
    os << "label_noise = " << detail::fmt_double(cfg.data.label_noise) << '\n';
    os << "seed = " << cfg.data.seed << '\n';
  }
  os << "\n[theory]\n";
  os << "enabled = " << (r.theory_checks ? "true" : "false") << '\n';
  os << "smoothness_l = " << detail::fmt_double(r.smoothness_L) << '\n';
  os << "\n[output]\n";
  os << "dir = " << cfg.output_dir << '\n';
  os << "checkpoint_every = " << cfg.checkpoint_every << '\n';
  return os.str();
}

}  // namespace fedlab
