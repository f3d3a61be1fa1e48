#include "fedser/experiment.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "fedser/errors.hpp"
#include "fedser/snapshot.hpp"

namespace fedser {

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

const RunAggregate& ExperimentReport::aggregate(const std::string& run) const {
  for (const auto& a : aggregates) {
    if (a.run == run) return a;
  }
  throw Error("run '" + run + "' not present in report");
}

TrainConfig train_config_for(const std::string& run, const TrainConfig& base) {
  TrainConfig cfg = base;
  if (run == "centralized") {
    cfg.algorithm = Algorithm::centralized;
    cfg.mode = TrainMode::fully_supervised;
  } else if (run == "fedavg") {
    cfg.algorithm = Algorithm::fedavg;
    cfg.mode = TrainMode::fully_supervised;
  } else if (run == "scaffold") {
    cfg.algorithm = Algorithm::scaffold;
    cfg.mode = TrainMode::fully_supervised;
  } else if (run == "supervised") {
    cfg.algorithm = Algorithm::scaffold;
    cfg.mode = TrainMode::supervised_only;
  } else if (run == "semi") {
    cfg.algorithm = Algorithm::scaffold;
    cfg.mode = TrainMode::semi;
  } else {
    throw ConfigError("unknown run '" + run + "'");
  }
  return cfg;
}

std::vector<FeatureRecord> load_dataset(const ExperimentConfig& cfg) {
  if (!cfg.features_path.empty()) return load_features(cfg.features_path);
  return synth_generate(cfg.synth, cfg.data_seed);
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

double stddev_of(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double m = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const ExperimentSinks& sinks) {
  cfg.validate();
  ExperimentReport report;
  report.config = to_key_values(cfg);
  report.fingerprint = fingerprint(report.config);
  report.seed = cfg.train.seed;

  const auto records = load_dataset(cfg);
  const auto folds = make_folds(records, cfg.folds, cfg.data_seed);

  for (const auto& run : cfg.runs) report.aggregates.push_back({run, {}, {}, 0, 0, 0, 0});

  for (std::size_t f = 0; f < cfg.folds_to_run; ++f) {
    const PartitionedDataset fold = znorm_dataset(folds[f]);
    for (std::size_t r = 0; r < cfg.runs.size(); ++r) {
      const std::string& run = cfg.runs[r];
      TrainConfig tc = train_config_for(run, cfg.train);
      tc.seed = cfg.train.seed + f;

      RunOptions options;
      if (sinks.rounds_log) {
        options.on_round = [&](const RoundReport& rr) { *sinks.rounds_log << round_to_json(run, f, rr).dump() << '\n'; };
      }
      spdlog::info("fold {} run {}: {} clients, {} test records", f, run, fold.clients.size(),
                   fold.test_records.size());
      const RunHistory history = run_training(tc, fold, options);

      RunSummary s;
      s.run = run;
      s.fold = f;
      s.seed = tc.seed;
      s.rounds = history.rounds.size();
      s.initial_test_uar = history.initial_test_uar;
      s.final_test_uar = history.final_test_uar;
      s.best_test_uar = history.best_test_uar;
      s.best_val_uar = history.best_val_uar;
      s.best_round = history.best_round;
      if (!history.rounds.empty()) s.final_pl_accuracy = history.rounds.back().pl_accuracy;
      report.runs.push_back(s);

      auto& agg = report.aggregates[r];
      agg.best_test_uar.push_back(s.best_test_uar);
      agg.final_test_uar.push_back(s.final_test_uar);

      if (!sinks.snapshot_dir.empty()) {
        const std::string stem = run + "_fold" + std::to_string(f);
        save_snapshot(sinks.snapshot_dir / (stem + "_final.bin"), history.final_model);
        save_snapshot(sinks.snapshot_dir / (stem + "_best.bin"), history.best_model);
      }
    }
  }
  for (auto& agg : report.aggregates) {
    agg.mean_best = mean_of(agg.best_test_uar);
    agg.std_best = stddev_of(agg.best_test_uar);
    agg.mean_final = mean_of(agg.final_test_uar);
    agg.std_final = stddev_of(agg.final_test_uar);
  }
  return report;
}

nlohmann::ordered_json round_to_json(const std::string& run, std::size_t fold, const RoundReport& r) {
  nlohmann::ordered_json j;
  j["run"] = run;
  j["fold"] = fold;
  j["round"] = r.round;
  j["tau"] = r.tau;
  j["participants"] = r.participants;
  auto adm = nlohmann::ordered_json::array();
  for (const auto& a : r.admissions) adm.push_back({{"client", a.client_id}, {"counts", a.counts}});
  j["admissions"] = adm;
  j["val_uar"] = optional_json(r.val_uar);
  j["test_uar"] = r.test_uar;
  auto recall = nlohmann::ordered_json::array();
  for (const auto& v : r.per_class_recall) recall.push_back(optional_json(v));
  j["per_class_recall"] = recall;
  j["pl_accuracy"] = optional_json(r.pl_accuracy);
  j["train_loss"] = r.train_loss;
  j["wall_ms"] = r.wall_ms;
  return j;
}

nlohmann::ordered_json report_to_json(const ExperimentReport& report) {
  nlohmann::ordered_json j;
  j["fingerprint"] = report.fingerprint;
  j["seed"] = report.seed;
  j["config"] = report.config;
  auto aggs = nlohmann::ordered_json::array();
  for (const auto& a : report.aggregates) {
    aggs.push_back({{"run", a.run},
                    {"mean_best_test_uar", a.mean_best},
                    {"std_best_test_uar", a.std_best},
                    {"mean_final_test_uar", a.mean_final},
                    {"std_final_test_uar", a.std_final},
                    {"best_test_uar", a.best_test_uar},
                    {"final_test_uar", a.final_test_uar}});
  }
  j["summary"] = aggs;
  auto runs = nlohmann::ordered_json::array();
  for (const auto& s : report.runs) {
    runs.push_back({{"run", s.run},
                    {"fold", s.fold},
                    {"seed", s.seed},
                    {"rounds", s.rounds},
                    {"initial_test_uar", s.initial_test_uar},
                    {"final_test_uar", s.final_test_uar},
                    {"best_test_uar", s.best_test_uar},
                    {"best_val_uar", optional_json(s.best_val_uar)},
                    {"best_round", s.best_round},
                    {"final_pl_accuracy", optional_json(s.final_pl_accuracy)}});
  }
  j["runs"] = runs;
  return j;
}

}  // namespace fedser
