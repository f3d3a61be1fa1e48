#pragma once

// Flat `dotted.key=value` configuration. Later sources override earlier
// ones; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "fedser/data.hpp"
#include "fedser/protocol.hpp"

namespace fedser {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>");
KeyValues load_key_values(const std::filesystem::path& path);

struct ExperimentConfig {
  TrainConfig train;

  std::string features_path;  // empty: generate a synthetic corpus
  SynthSpec synth;
  std::uint64_t data_seed = 0;
  FoldOptions folds;
  std::size_t folds_to_run = 5;
  std::vector<std::string> runs{"centralized", "fedavg", "scaffold", "supervised", "semi"};

  void validate() const;
};

ExperimentConfig experiment_config_from(const KeyValues& kv);

// Every effective setting, defaults included.
KeyValues to_key_values(const ExperimentConfig& cfg);

// FNV-1a over the canonical key=value dump.
std::string fingerprint(const KeyValues& kv);

// Synthetic spec from keys without prefix (speakers=8, dim=32, ...).
SynthSpec synth_spec_from(const KeyValues& kv, const std::string& prefix = "");

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

// Runs supported by the experiment driver.
const std::vector<std::string>& known_runs();

}  // namespace fedser
