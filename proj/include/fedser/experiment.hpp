#pragma once

// Multi-fold experiment driver: builds folds, runs every requested baseline
// on each fold and aggregates test UAR per run.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedser/config.hpp"
#include "fedser/protocol.hpp"

namespace fedser {

struct RunSummary {
  std::string run;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::size_t rounds = 0;
  double initial_test_uar = 0.0;
  double final_test_uar = 0.0;
  double best_test_uar = 0.0;
  std::optional<double> best_val_uar;
  int best_round = -1;
  std::optional<double> final_pl_accuracy;
};

struct RunAggregate {
  std::string run;
  std::vector<double> best_test_uar;  // per fold
  std::vector<double> final_test_uar;
  double mean_best = 0.0;
  double std_best = 0.0;
  double mean_final = 0.0;
  double std_final = 0.0;
};

struct ExperimentReport {
  KeyValues config;
  std::string fingerprint;
  std::uint64_t seed = 0;
  std::vector<RunSummary> runs;
  std::vector<RunAggregate> aggregates;  // in experiment.runs order

  const RunAggregate& aggregate(const std::string& run) const;
};

struct ExperimentSinks {
  std::ostream* rounds_log = nullptr;   // JSON lines, one per round
  std::filesystem::path snapshot_dir;  // empty: no snapshots
};

// Train config for a named run: centralized / fedavg / scaffold are fully
// supervised, supervised and semi use SCAFFOLD at the configured label rate.
TrainConfig train_config_for(const std::string& run, const TrainConfig& base);

std::vector<FeatureRecord> load_dataset(const ExperimentConfig& cfg);

ExperimentReport run_experiment(const ExperimentConfig& cfg, const ExperimentSinks& sinks = {});

double mean_of(const std::vector<double>& values);
// Sample standard deviation; 0 for fewer than two values.
double stddev_of(const std::vector<double>& values);

nlohmann::ordered_json round_to_json(const std::string& run, std::size_t fold, const RoundReport& report);
nlohmann::ordered_json report_to_json(const ExperimentReport& report);

}  // namespace fedser
