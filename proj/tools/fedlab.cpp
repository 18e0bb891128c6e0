// fedlab: config-driven experiment runner for federated training on
// spurious-correlation benchmarks.
//
//   fedlab run <config> [--out DIR]
//   fedlab sweep-epochs <config> --epochs E1,E2,... [--algorithms a,b] [--out DIR]
//   fedlab ablate <config> [--out DIR]
//   fedlab gen-data <config> [--out DIR]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime abort.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "fedlab/config.hpp"
#include "fedlab/experiment.hpp"

namespace {

void usage(std::ostream& os) {
  os << "usage: fedlab <command> <config> [options]\n"
        "\n"
        "commands:\n"
        "  run           execute one training run (metrics.csv, masks.csv)\n"
        "  sweep-epochs  run each algorithm x local-epoch combination\n"
        "  ablate        run full fedgen and the three component removals\n"
        "  gen-data      generate synthetic environment CSVs + manifest\n"
        "\n"
        "options:\n"
        "  --out DIR          override output.dir from the config\n"
        "  --epochs LIST      comma-separated local epoch counts (sweep-epochs)\n"
        "  --algorithms LIST  algorithms to sweep (default fedavg,fedgen)\n";
}

std::vector<std::string> split_arg(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.size() < 2) {
    usage(std::cerr);
    return 1;
  }
  const std::string command = args[0];
  const std::string config_path = args[1];

  std::string out_override;
  std::string epochs_arg;
  std::string algorithms_arg = "fedavg,fedgen";
  for (std::size_t i = 2; i < args.size(); ++i) {
    auto next = [&](const char* flag) -> std::string {
      if (i + 1 >= args.size()) {
        throw fedlab::ConfigError(std::string(flag) + " requires a value");
      }
      return args[++i];
    };
    try {
      if (args[i] == "--out") {
        out_override = next("--out");
      } else if (args[i] == "--epochs") {
        epochs_arg = next("--epochs");
      } else if (args[i] == "--algorithms") {
        algorithms_arg = next("--algorithms");
      } else {
        std::cerr << "unknown option: " << args[i] << "\n";
        usage(std::cerr);
        return 1;
      }
    } catch (const fedlab::ConfigError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }

  try {
    fedlab::ExperimentConfig cfg = fedlab::load_experiment_config(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;

    if (command == "run") {
      const fedlab::RunResult result = fedlab::cmd_run(cfg);
      const fedlab::RoundReport& last = result.reports.back();
      std::printf("%s: %zu rounds%s, train acc %.4f, test acc %.4f -> %s\n",
                  fedlab::algorithm_name(cfg.run.algorithm), result.rounds_run,
                  result.stopped_early ? " (stopped early)" : "",
                  last.train_accuracy, last.test_accuracy, cfg.output_dir.c_str());
    } else if (command == "sweep-epochs") {
      if (epochs_arg.empty()) {
        throw fedlab::ConfigError("sweep-epochs requires --epochs E1,E2,...");
      }
      std::vector<std::size_t> epochs;
      for (const std::string& e : split_arg(epochs_arg)) {
        epochs.push_back(static_cast<std::size_t>(std::stoull(e)));
      }
      std::vector<fedlab::Algorithm> algorithms;
      for (const std::string& a : split_arg(algorithms_arg)) {
        algorithms.push_back(fedlab::parse_algorithm(a));
      }
      const auto rows = fedlab::cmd_sweep_epochs(cfg, epochs, algorithms);
      for (const auto& r : rows) {
        std::printf("%s E=%zu: test acc %.4f (%zu rounds)\n", r.algorithm.c_str(),
                    r.local_epochs, r.final_test_accuracy, r.rounds_run);
      }
    } else if (command == "ablate") {
      const auto rows = fedlab::cmd_ablate(cfg);
      for (const auto& r : rows) {
        std::printf("%-11s test acc %.4f\n", r.variant.c_str(), r.test_accuracy);
      }
    } else if (command == "gen-data") {
      fedlab::cmd_gendata(cfg);
      std::printf("environments written to %s\n", cfg.output_dir.c_str());
    } else {
      std::cerr << "unknown command: " << command << "\n";
      usage(std::cerr);
      return 1;
    }
  } catch (const fedlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
