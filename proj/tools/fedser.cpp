// fedser: command line front end.
//
//   fedser run   --config <path> [--mode <run>] [--label-rate r] [--seed n] [--out dir] [--set key=value]...
//   fedser synth --spec <path> --out features.csv [--seed n]
//   fedser eval  --model <snapshot> --features <csv> [--no-znorm]
//
// Exit codes: 0 success, 1 runtime error, 2 configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "fedser/config.hpp"
#include "fedser/data.hpp"
#include "fedser/errors.hpp"
#include "fedser/experiment.hpp"
#include "fedser/metrics.hpp"
#include "fedser/snapshot.hpp"

namespace {

constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

int cmd_run(const std::string& config_path, const std::string& mode, const std::optional<double>& label_rate,
            const std::optional<std::uint64_t>& seed, const std::string& out_dir,
            const std::vector<std::string>& overrides) {
  auto kv = fedser::load_key_values(config_path);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw fedser::ConfigError("--set expects key=value, got '" + o + "'");
    kv[o.substr(0, eq)] = o.substr(eq + 1);
  }
  if (!mode.empty()) kv["experiment.runs"] = mode;
  if (label_rate) kv["train.label_rate"] = std::to_string(*label_rate);
  if (seed) kv["seed"] = std::to_string(*seed);
  const auto cfg = fedser::experiment_config_from(kv);

  const std::filesystem::path out(out_dir);
  std::filesystem::create_directories(out);
  std::ofstream rounds(out / "rounds.jsonl");
  if (!rounds) throw fedser::Error("cannot write " + (out / "rounds.jsonl").string());

  fedser::ExperimentSinks sinks;
  sinks.rounds_log = &rounds;
  sinks.snapshot_dir = out;
  const auto report = fedser::run_experiment(cfg, sinks);

  std::ofstream report_file(out / "report.json");
  report_file << fedser::report_to_json(report).dump(2) << '\n';
  for (const auto& a : report.aggregates) {
    std::cout << a.run << ": test UAR " << a.mean_best << " +/- " << a.std_best << " (best-val snapshot), "
              << a.mean_final << " (final)\n";
  }
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out, const std::optional<std::uint64_t>& seed) {
  const auto kv = fedser::load_key_values(spec_path);
  const auto spec = fedser::synth_spec_from(kv);
  std::uint64_t s = 0;
  if (seed) {
    s = *seed;
  } else if (auto it = kv.find("seed"); it != kv.end()) {
    s = std::stoull(it->second);
  }
  const auto records = fedser::synth_generate(spec, s);
  fedser::write_features(out, records);
  std::cout << "wrote " << records.size() << " records to " << out << '\n';
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& features, bool znorm) {
  const auto model = fedser::load_snapshot(model_path);
  auto records = fedser::load_features(features);
  std::vector<fedser::FeatureRecord> labeled;
  for (auto& r : records) {
    if (r.label) labeled.push_back(std::move(r));
  }
  if (labeled.empty()) throw fedser::Error("feature file has no labeled rows");
  if (znorm) {
    std::map<std::string, std::vector<std::size_t>> by_speaker;
    for (std::size_t i = 0; i < labeled.size(); ++i) by_speaker[labeled[i].speaker_id].push_back(i);
    for (const auto& [speaker, idx] : by_speaker) {
      std::vector<fedser::FeatureRecord> group;
      for (auto i : idx) group.push_back(labeled[i]);
      fedser::znorm_group(group);
      for (std::size_t j = 0; j < idx.size(); ++j) labeled[idx[j]] = std::move(group[j]);
    }
  }
  const std::size_t classes = model.output_dim();
  const auto eval = fedser::evaluate(model, labeled, classes);
  std::vector<int> truth;
  for (const auto& r : labeled) truth.push_back(*r.label);

  nlohmann::ordered_json j;
  j["records"] = labeled.size();
  j["uar"] = eval.uar;
  auto recall = nlohmann::ordered_json::array();
  for (const auto& v : eval.recall) recall.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr));
  j["per_class_recall"] = recall;
  j["confusion"] = fedser::confusion(eval.predictions, truth, classes);
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised federated speech emotion recognition simulator"};
  app.require_subcommand(1);

  std::string config_path, mode, out_dir = "out";
  std::optional<double> label_rate;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "Run a multi-fold experiment");
  run->add_option("--config", config_path, "key=value config file")->required()->check(CLI::ExistingFile);
  run->add_option("--mode", mode, "Restrict to one run")
      ->check(CLI::IsMember({"centralized", "fedavg", "scaffold", "supervised", "semi"}));
  run->add_option("--label-rate", label_rate, "Label rate for supervised/semi runs");
  run->add_option("--seed", seed, "Base seed");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--set", overrides, "Override a config key (key=value)");

  std::string spec_path, synth_out;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "Write a synthetic feature CSV");
  synth->add_option("--spec", spec_path, "Synthetic spec file")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output CSV")->required();
  synth->add_option("--seed", synth_seed, "Generator seed (overrides the spec's seed key)");

  std::string model_path, features_path;
  bool no_znorm = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a model snapshot on a feature CSV");
  eval->add_option("--model", model_path, "Model snapshot")->required()->check(CLI::ExistingFile);
  eval->add_option("--features", features_path, "Feature CSV")->required()->check(CLI::ExistingFile);
  eval->add_flag("--no-znorm", no_znorm, "Skip per-speaker z-normalization");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*run) return cmd_run(config_path, mode, label_rate, seed, out_dir, overrides);
    if (*synth) return cmd_synth(spec_path, synth_out, synth_seed);
    if (*eval) return cmd_eval(model_path, features_path, !no_znorm);
  } catch (const fedser::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeError;
  }
  return kRuntimeError;
}
