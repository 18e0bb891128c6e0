#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlab/rng.hpp"

namespace fedlab {

// A labeled dataset tagged with its spurious-correlation strength and which
// columns carry the spurious codes. alpha < 0 means "not annotated" (mixed
// client shards, externally loaded data without a known strength).
struct Environment {
  std::size_t num_features = 0;
  std::vector<double> x;  // rows * num_features, row-major
  std::vector<int> y;
  double alpha = -1.0;
  std::vector<std::size_t> spurious_idx;
  std::string env_id;

  std::size_t size() const { return y.size(); }
  std::span<const double> row(std::size_t r) const {
    return {x.data() + r * num_features, num_features};
  }
};

struct DatasetSpec {
  std::size_t invariant_features = 10;
  std::size_t spurious_features = 1;
  std::size_t classes = 2;
  std::vector<double> train_alphas = {0.8, 0.9};
  double test_alpha = 0.1;
  std::size_t samples_per_env = 2000;
  double label_noise = 0.1;
  std::uint64_t seed = 1;
};

inline void validate(const DatasetSpec& spec) {
  if (spec.invariant_features < 1) {
    throw std::invalid_argument("dataset spec: need at least one invariant feature");
  }
  if (spec.classes < 2) {
    throw std::invalid_argument("dataset spec: need at least two classes");
  }
  if (spec.samples_per_env < 1) {
    throw std::invalid_argument("dataset spec: samples per environment must be >= 1");
  }
  if (spec.train_alphas.empty()) {
    throw std::invalid_argument("dataset spec: need at least one training distribution");
  }
  for (double a : spec.train_alphas) {
    if (a < 0.0 || a > 1.0) throw std::invalid_argument("dataset spec: alpha outside [0,1]");
  }
  if (spec.test_alpha < 0.0 || spec.test_alpha > 1.0) {
    throw std::invalid_argument("dataset spec: alpha outside [0,1]");
  }
  if (spec.label_noise < 0.0 || spec.label_noise >= 1.0) {
    throw std::invalid_argument("dataset spec: label noise outside [0,1)");
  }
}

// Scalar code standing in for class c's indicative symbol: evenly spaced in
// [-sqrt(2), sqrt(2)] so the column's second moment matches the invariant
// features' (mean +/-1, unit variance).
inline double spurious_code(std::size_t cls, std::size_t classes) {
  if (classes < 2) return 0.0;
  const double unit = 2.0 * static_cast<double>(cls) / static_cast<double>(classes - 1) - 1.0;
  return 1.4142135623730951 * unit;
}

namespace detail {

inline std::size_t other_class(Rng& rng, std::size_t cls, std::size_t classes) {
  const std::size_t o = rng.below(classes - 1);
  return o >= cls ? o + 1 : o;
}

}  // namespace detail

// Synthetic spurious-correlation benchmark. Per sample: the invariant block
// is class-conditionally Gaussian (means +/-1, unit variance), the observed
// label is flipped with the noise rate, and each spurious column carries the
// observed label's code with probability alpha (a random other code
// otherwise). The spurious column therefore predicts the label at exactly
// rate alpha while the invariant block tops out at 1 - noise.
inline std::vector<Environment> gen_synthetic(const DatasetSpec& spec) {
  validate(spec);
  const std::size_t j = spec.invariant_features + spec.spurious_features;

  std::vector<double> alphas = spec.train_alphas;
  alphas.push_back(spec.test_alpha);

  std::vector<Environment> envs;
  for (std::size_t e = 0; e < alphas.size(); ++e) {
    const bool is_test = e + 1 == alphas.size();
    Environment env;
    env.num_features = j;
    env.alpha = alphas[e];
    env.env_id = is_test ? "test" : "train" + std::to_string(e);
    for (std::size_t s = 0; s < spec.spurious_features; ++s) {
      env.spurious_idx.push_back(spec.invariant_features + s);
    }
    env.x.resize(spec.samples_per_env * j);
    env.y.resize(spec.samples_per_env);

    Rng rng(mix_seed({spec.seed, 0xda7aULL, e}));
    for (std::size_t n = 0; n < spec.samples_per_env; ++n) {
      double* row = env.x.data() + n * j;
      const std::size_t y_true = rng.below(spec.classes);
      for (std::size_t i = 0; i < spec.invariant_features; ++i) {
        const double mean = (i % spec.classes) == y_true ? 1.0 : -1.0;
        row[i] = mean + rng.normal();
      }
      std::size_t y_obs = y_true;
      if (spec.label_noise > 0.0 && rng.uniform() < spec.label_noise) {
        y_obs = detail::other_class(rng, y_true, spec.classes);
      }
      for (std::size_t s = 0; s < spec.spurious_features; ++s) {
        const bool match = rng.uniform() < env.alpha;
        const std::size_t code_class =
            match ? y_obs : detail::other_class(rng, y_obs, spec.classes);
        row[spec.invariant_features + s] = spurious_code(code_class, spec.classes);
      }
      env.y[n] = static_cast<int>(y_obs);
    }
    envs.push_back(std::move(env));
  }
  return envs;
}

enum class PartitionScheme { kStratified, kMixed };

inline PartitionScheme parse_partition_scheme(const std::string& s) {
  if (s == "stratified") return PartitionScheme::kStratified;
  if (s == "mixed") return PartitionScheme::kMixed;
  throw std::invalid_argument("unknown partition scheme: " + s);
}

// Splits training environments into per-client shards. Stratified: each
// client serves one environment (environment blocks spread over the client
// range; with fewer clients than environments a client absorbs several whole
// environments). Mixed: all rows pooled and dealt round-robin, so every
// client sees every distribution. Either way each sample lands exactly once.
inline std::vector<Environment> partition_clients(
    const std::vector<Environment>& envs, std::size_t num_clients,
    PartitionScheme scheme) {
  if (num_clients < 1) throw std::invalid_argument("partition: need at least one client");
  if (envs.empty()) throw std::invalid_argument("partition: no environments");
  std::size_t total = 0;
  for (const Environment& e : envs) total += e.size();
  if (total < num_clients) {
    throw std::invalid_argument("partition: fewer samples (" + std::to_string(total) +
                                ") than clients (" + std::to_string(num_clients) + ")");
  }
  const std::size_t j = envs.front().num_features;
  for (const Environment& e : envs) {
    if (e.num_features != j) {
      throw std::invalid_argument("partition: environments disagree on feature count");
    }
  }

  std::vector<Environment> shards(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) {
    shards[k].num_features = j;
    shards[k].spurious_idx = envs.front().spurious_idx;
    shards[k].env_id = "client" + std::to_string(k);
    shards[k].alpha = -1.0;
  }

  auto append_row = [j](Environment& shard, const Environment& src, std::size_t r) {
    const auto row = src.row(r);
    shard.x.insert(shard.x.end(), row.begin(), row.end());
    shard.y.push_back(src.y[r]);
  };

  // a shard keeps an environment's alpha only if every row it holds shares it
  std::vector<bool> touched(num_clients, false);
  auto note_alpha = [&](std::size_t k, double alpha) {
    if (!touched[k]) {
      shards[k].alpha = alpha;
      touched[k] = true;
    } else if (shards[k].alpha != alpha) {
      shards[k].alpha = -1.0;
    }
  };

  if (scheme == PartitionScheme::kMixed) {
    std::size_t next = 0;
    for (const Environment& env : envs) {
      for (std::size_t r = 0; r < env.size(); ++r) {
        const std::size_t k = next % num_clients;
        append_row(shards[k], env, r);
        note_alpha(k, env.alpha);
        ++next;
      }
    }
  } else {
    const std::size_t m = envs.size();
    // client k serves environment k*m/num_clients; when environments
    // outnumber clients the mapping flips and a client absorbs several
    std::vector<std::vector<std::size_t>> env_clients(m);
    if (num_clients >= m) {
      for (std::size_t k = 0; k < num_clients; ++k) {
        env_clients[k * m / num_clients].push_back(k);
      }
    } else {
      for (std::size_t e = 0; e < m; ++e) {
        env_clients[e].push_back(e * num_clients / m);
      }
    }
    for (std::size_t e = 0; e < m; ++e) {
      const auto& owners = env_clients[e];
      for (std::size_t r = 0; r < envs[e].size(); ++r) {
        const std::size_t k = owners[r % owners.size()];
        append_row(shards[k], envs[e], r);
        note_alpha(k, envs[e].alpha);
      }
    }
  }

  for (std::size_t k = 0; k < num_clients; ++k) {
    if (shards[k].y.empty()) {
      throw std::invalid_argument("partition: client " + std::to_string(k) +
                                  " would receive no samples");
    }
  }
  return shards;
}

// Zeroes the spurious columns in place of removing them, so the same model
// architecture runs on stripped data (the oracle baseline's input).
inline Environment strip_spurious(const Environment& env) {
  Environment out = env;
  for (std::size_t r = 0; r < out.size(); ++r) {
    for (std::size_t i : out.spurious_idx) {
      out.x[r * out.num_features + i] = 0.0;
    }
  }
  out.spurious_idx.clear();
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

inline double parse_cell(const std::string& cell, std::size_t line_no,
                         const std::string& column) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0') {
    throw std::invalid_argument("csv: non-numeric value '" + cell + "' at row " +
                                std::to_string(line_no) + " column " + column);
  }
  return v;
}

}  // namespace detail

// Comma-separated, one header row, numeric features, integral labels in the
// named column. Metadata (alpha, spurious indices) comes from the caller.
inline Environment load_csv(const std::string& path,
                            const std::string& label_column,
                            std::vector<std::size_t> spurious_idx,
                            double alpha) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = detail::split_csv_line(line);

  std::size_t label_col = header.size();
  std::vector<std::string> feature_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == label_column) {
      label_col = c;
    } else {
      feature_names.push_back(header[c]);
    }
  }
  if (label_col == header.size()) {
    throw std::invalid_argument("csv: label column '" + label_column +
                                "' not found in " + path);
  }

  Environment env;
  env.num_features = header.size() - 1;
  env.alpha = alpha;
  env.spurious_idx = std::move(spurious_idx);
  env.env_id = path;
  for (std::size_t i : env.spurious_idx) {
    if (i >= env.num_features) {
      throw std::invalid_argument("csv: spurious index " + std::to_string(i) +
                                  " out of range for " + std::to_string(env.num_features) +
                                  " features");
    }
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::invalid_argument("csv: row " + std::to_string(line_no) + " has " +
                                  std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const double v = detail::parse_cell(cells[c], line_no, header[c]);
      if (c == label_col) {
        if (v < 0.0 || v != std::floor(v)) {
          throw std::invalid_argument("csv: label out of range at row " +
                                      std::to_string(line_no) + " column " + header[c]);
        }
        env.y.push_back(static_cast<int>(v));
      } else {
        env.x.push_back(v);
      }
    }
  }
  if (env.y.empty()) throw std::invalid_argument("csv: no data rows in " + path);
  return env;
}

// %.17g round-trips doubles exactly, which the export/reload contract needs.
inline void save_csv(const Environment& env, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  for (std::size_t i = 0; i < env.num_features; ++i) out << 'f' << i << ',';
  out << "label\n";
  char buf[40];
  for (std::size_t r = 0; r < env.size(); ++r) {
    const auto row = env.row(r);
    for (std::size_t i = 0; i < env.num_features; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
      out << buf << ',';
    }
    out << env.y[r] << '\n';
  }
  if (!out) throw std::runtime_error("csv: write failed for " + path);
}

}  // namespace fedlab
