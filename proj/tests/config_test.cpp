#include "fedlab/config.hpp"

#include <string>

#include "gtest/gtest.h"

namespace fedlab {
namespace {

constexpr const char* kMinimal =
    "[run]\n"
    "algorithm = fedgen\n"
    "eta = 0.1\n";

TEST(ConfigParse, MinimalConfigGetsDefaults) {
  ConfigMap cm = ConfigMap::parse_string(kMinimal, "test");
  const ExperimentConfig cfg = load_experiment_config(cm);
  EXPECT_EQ(cfg.run.algorithm, Algorithm::kFedGen);
  EXPECT_DOUBLE_EQ(cfg.run.eta, 0.1);
  EXPECT_EQ(cfg.run.rounds, 30u);
  EXPECT_EQ(cfg.run.local_epochs, 40u);
  EXPECT_EQ(cfg.run.clients, 10u);
  EXPECT_DOUBLE_EQ(cfg.run.lambda, 1.0);
  EXPECT_DOUBLE_EQ(cfg.run.l1_weight, 1e-6);
  EXPECT_DOUBLE_EQ(cfg.run.mu, 1e-3);
  EXPECT_EQ(cfg.run.batch_size, 64u);
  EXPECT_DOUBLE_EQ(cfg.run.mask_alpha, 10.0);
  EXPECT_DOUBLE_EQ(cfg.run.mask_beta, 0.1);
  EXPECT_DOUBLE_EQ(cfg.run.mask_delta, 0.9);
  EXPECT_EQ(cfg.run.warmup_epochs, 5);
  EXPECT_EQ(cfg.run.hidden_dims, (std::vector<std::size_t>{50, 50}));
  EXPECT_EQ(cfg.run.partition, PartitionScheme::kStratified);
  EXPECT_FALSE(cfg.run.theory_checks);
  EXPECT_EQ(cfg.data.invariant_features, 10u);
  EXPECT_DOUBLE_EQ(cfg.data.test_alpha, 0.1);
  EXPECT_DOUBLE_EQ(cfg.data.label_noise, 0.1);
  EXPECT_EQ(cfg.output_dir, "out");
}

TEST(ConfigParse, MissingEtaNamesTheField) {
  ConfigMap cm = ConfigMap::parse_string("[run]\nalgorithm = fedavg\n", "test");
  try {
    load_experiment_config(cm);
    FAIL() << "expected missing-field error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.eta"), std::string::npos) << e.what();
  }
}

TEST(ConfigParse, MissingAlgorithmNamesTheField) {
  ConfigMap cm = ConfigMap::parse_string("[run]\neta = 0.1\n", "test");
  try {
    load_experiment_config(cm);
    FAIL() << "expected missing-field error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.algorithm"), std::string::npos);
  }
}

TEST(ConfigParse, UnknownFieldRejected) {
  const std::string text = std::string(kMinimal) + "etaa = 0.5\n";
  ConfigMap cm = ConfigMap::parse_string(text, "test");
  try {
    load_experiment_config(cm);
    FAIL() << "expected unknown-field error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.etaa"), std::string::npos) << e.what();
  }
}

TEST(ConfigParse, BadValuesNameTheField) {
  {
    ConfigMap cm = ConfigMap::parse_string(
        "[run]\nalgorithm = fedavg\neta = fast\n", "test");
    EXPECT_THROW(load_experiment_config(cm), ConfigError);
  }
  {
    ConfigMap cm = ConfigMap::parse_string(
        std::string(kMinimal) + "disable_mask = maybe\n", "test");
    EXPECT_THROW(load_experiment_config(cm), ConfigError);
  }
  {
    ConfigMap cm = ConfigMap::parse_string(
        "[run]\nalgorithm = warp\neta = 0.1\n", "test");
    EXPECT_THROW(load_experiment_config(cm), std::invalid_argument);
  }
}

TEST(ConfigParse, DuplicateKeyRejected) {
  EXPECT_THROW(
      ConfigMap::parse_string("[run]\neta = 0.1\neta = 0.2\n", "test"),
      ConfigError);
}

TEST(ConfigParse, MalformedLinesRejected) {
  EXPECT_THROW(ConfigMap::parse_string("[run\neta = 0.1\n", "test"), ConfigError);
  EXPECT_THROW(ConfigMap::parse_string("[run]\njust a line\n", "test"), ConfigError);
}

TEST(ConfigParse, CommentsAndWhitespaceIgnored) {
  ConfigMap cm = ConfigMap::parse_string(
      "# experiment\n[run]\n  algorithm = fedavg  # trailing\n\n eta=0.05\n",
      "test");
  const ExperimentConfig cfg = load_experiment_config(cm);
  EXPECT_EQ(cfg.run.algorithm, Algorithm::kFedAvg);
  EXPECT_DOUBLE_EQ(cfg.run.eta, 0.05);
}

TEST(ConfigParse, ListsAndSections) {
  ConfigMap cm = ConfigMap::parse_string(
      "[run]\nalgorithm = fedgen\neta = 0.1\nhidden = 8,4\n"
      "[data]\ntrain_alphas = 0.8, 0.85, 0.9\nclasses = 4\n"
      "[output]\ndir = /tmp/xyz\ncheckpoint_every = 5\n",
      "test");
  const ExperimentConfig cfg = load_experiment_config(cm);
  EXPECT_EQ(cfg.run.hidden_dims, (std::vector<std::size_t>{8, 4}));
  EXPECT_EQ(cfg.data.train_alphas, (std::vector<double>{0.8, 0.85, 0.9}));
  EXPECT_EQ(cfg.data.classes, 4u);
  EXPECT_EQ(cfg.output_dir, "/tmp/xyz");
  EXPECT_EQ(cfg.checkpoint_every, 5u);
}

TEST(ConfigParse, PerAlgorithmEtaOverrides) {
  ConfigMap cm = ConfigMap::parse_string(
      std::string(kMinimal) + "eta_fedavg = 0.004\n", "test");
  const ExperimentConfig cfg = load_experiment_config(cm);
  EXPECT_DOUBLE_EQ(resolved_eta(cfg, Algorithm::kFedAvg), 0.004);
  EXPECT_DOUBLE_EQ(resolved_eta(cfg, Algorithm::kFedGen), 0.1);
  EXPECT_DOUBLE_EQ(resolved_eta(cfg, Algorithm::kInvFedAvg), 0.1);
}

TEST(ConfigParse, InvalidRunConfigRejected) {
  ConfigMap cm = ConfigMap::parse_string(
      "[run]\nalgorithm = fedavg\neta = 0.1\nclient_fraction = 1.5\n", "test");
  EXPECT_THROW(load_experiment_config(cm), ConfigError);
}

TEST(ResolvedConfig, RoundTripsThroughParser) {
  ConfigMap cm = ConfigMap::parse_string(
      "[run]\nalgorithm = fedgen\neta = 0.1\neta_fedavg = 0.004\nhidden = \n"
      "[masking]\nbeta = 0.5\ndelta = 0.99\ne_init = 120\n"
      "[data]\nlabel_noise = 0.25\nsamples_per_env = 600\n",
      "test");
  const ExperimentConfig cfg = load_experiment_config(cm);
  const std::string text = resolved_config_text(cfg);
  ConfigMap cm2 = ConfigMap::parse_string(text, "resolved");
  const ExperimentConfig cfg2 = load_experiment_config(cm2);
  EXPECT_EQ(resolved_config_text(cfg2), text);
  EXPECT_DOUBLE_EQ(cfg2.run.mask_beta, 0.5);
  EXPECT_TRUE(cfg2.run.hidden_dims.empty());
  EXPECT_DOUBLE_EQ(cfg2.data.label_noise, 0.25);
}

TEST(ResolvedConfig, CsvModeRoundTrips) {
  ConfigMap cm = ConfigMap::parse_string(
      "[run]\nalgorithm = fedavg\neta = 0.01\n"
      "[data]\ntrain_csv = a.csv,b.csv\ntest_csv = t.csv\nlabel_column = y\n"
      "spurious_idx = 3\ntrain_alphas = 0.8,0.9\ntest_alpha = 0.1\n",
      "test");
  const ExperimentConfig cfg = load_experiment_config(cm);
  ASSERT_TRUE(cfg.use_csv);
  EXPECT_EQ(cfg.train_csv, (std::vector<std::string>{"a.csv", "b.csv"}));
  EXPECT_EQ(cfg.test_csv, "t.csv");
  EXPECT_EQ(cfg.label_column, "y");
  const std::string text = resolved_config_text(cfg);
  ConfigMap cm2 = ConfigMap::parse_string(text, "resolved");
  const ExperimentConfig cfg2 = load_experiment_config(cm2);
  EXPECT_EQ(resolved_config_text(cfg2), text);
}

}  // namespace
}  // namespace fedlab
