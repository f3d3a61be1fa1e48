#include <doctest.h>

#include <sstream>

#include "fedser/errors.hpp"
#include "fedser/experiment.hpp"

using namespace fedser;

namespace {

ExperimentConfig small_experiment() {
  return experiment_config_from({{"model.hidden", "16"},
                                 {"train.lr", "0.05"},
                                 {"train.rounds", "4"},
                                 {"train.participation", "0.5"},
                                 {"pl.kappa", "0.05"},
                                 {"data.synth.speakers", "5"},
                                 {"data.synth.per_speaker", "40"},
                                 {"data.synth.dim", "8"},
                                 {"experiment.folds", "2"}});
}

}  // namespace

TEST_CASE("untrained model sits at chance") {
  auto cfg = experiment_config_from({{"train.rounds", "0"},
                                     {"experiment.folds", "1"},
                                     {"experiment.runs", "scaffold"},
                                     {"data.synth.per_speaker", "200"}});
  const auto report = run_experiment(cfg);
  REQUIRE(report.runs.size() == 1);
  CHECK(report.runs[0].rounds == 0);
  CHECK(std::abs(report.aggregate("scaffold").mean_final - 0.25) <= 0.05);
}

TEST_CASE("report means are recomputable from per-fold values") {
  const auto report = run_experiment(small_experiment());
  CHECK(report.aggregates.size() == 5);
  CHECK(report.runs.size() == 10);
  for (const auto& agg : report.aggregates) {
    double best = 0.0, fin = 0.0;
    std::size_t n = 0;
    for (const auto& r : report.runs) {
      if (r.run != agg.run) continue;
      best += r.best_test_uar;
      fin += r.final_test_uar;
      ++n;
    }
    REQUIRE(n == 2);
    CHECK(std::abs(agg.mean_best - best / 2.0) <= 1e-12);
    CHECK(std::abs(agg.mean_final - fin / 2.0) <= 1e-12);
  }
  CHECK_THROWS_AS(report.aggregate("nope"), Error);
}

TEST_CASE("same config twice gives identical reports and logs") {
  const auto cfg = small_experiment();
  std::ostringstream log_a, log_b;
  ExperimentSinks a{&log_a, {}};
  ExperimentSinks b{&log_b, {}};
  auto ja = report_to_json(run_experiment(cfg, a));
  auto jb = report_to_json(run_experiment(cfg, b));
  CHECK(ja == jb);

  auto strip = [](const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      j.erase("wall_ms");
      out += j.dump() + "\n";
    }
    return out;
  };
  CHECK(strip(log_a.str()) == strip(log_b.str()));
  CHECK_FALSE(log_a.str().empty());
}

TEST_CASE("run configs per baseline") {
  TrainConfig base;
  base.label_rate = 0.4;
  CHECK(train_config_for("centralized", base).algorithm == Algorithm::centralized);
  CHECK(train_config_for("fedavg", base).mode == TrainMode::fully_supervised);
  CHECK(train_config_for("scaffold", base).algorithm == Algorithm::scaffold);
  CHECK(train_config_for("supervised", base).mode == TrainMode::supervised_only);
  const auto semi = train_config_for("semi", base);
  CHECK(semi.mode == TrainMode::semi);
  CHECK(semi.label_rate == 0.4);
  CHECK_THROWS_AS(train_config_for("bogus", base), ConfigError);
}

TEST_CASE("round log line layout") {
  RoundReport r;
  r.round = 3;
  r.tau = 0.55;
  r.participants = {1, 4};
  r.admissions = {{1, {0, 1, 0, 0}}};
  r.val_uar = 0.5;
  r.test_uar = 0.25;
  r.per_class_recall = {1.0, std::nullopt};
  r.train_loss = 1.25;
  const auto j = round_to_json("semi", 2, r);
  CHECK(j["run"] == "semi");
  CHECK(j["fold"] == 2);
  CHECK(j["round"] == 3);
  CHECK(j["participants"].size() == 2);
  CHECK(j["admissions"][0]["client"] == 1);
  CHECK(j["per_class_recall"][1].is_null());
  CHECK(j["pl_accuracy"].is_null());
  CHECK(j.contains("wall_ms"));
}

TEST_CASE("summary statistics") {
  CHECK(mean_of({1.0, 2.0, 3.0}) == 2.0);
  CHECK(stddev_of({1.0, 2.0, 3.0}) == doctest::Approx(1.0));
  CHECK(stddev_of({4.0}) == 0.0);
}
