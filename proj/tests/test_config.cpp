#include <doctest.h>

#include <sstream>

#include "fedser/config.hpp"
#include "fedser/errors.hpp"

using namespace fedser;

namespace {

KeyValues parse(const std::string& text) {
  std::istringstream in(text);
  return parse_key_values(in);
}

}  // namespace

TEST_CASE("defaults carry the published training settings") {
  const auto cfg = experiment_config_from({});
  const TrainConfig& t = cfg.train;
  CHECK(t.hidden == std::vector<std::size_t>{256, 128});
  CHECK(t.dropout == 0.2);
  CHECK(t.lr == 1e-4);
  CHECK(t.local_epochs == 1);
  CHECK(t.batch_size == 16);
  CHECK(t.rounds == 500);
  CHECK(t.participation == 0.1);
  CHECK(t.pl.views == 10);
  CHECK(t.pl.temperature == 2.0);
  CHECK(t.pl.tau_start == 0.5);
  CHECK(t.pl.tau_end == 0.9);
  CHECK(t.pl.tau_ramp_epochs == 300);
  CHECK(t.pl.kappa == 0.005);
  CHECK(t.pl.per_class_budget == 1);
  CHECK(t.sfa.weak.sigma1 == 0.1);
  CHECK(t.sfa.weak.sigma2 == 0.1);
  CHECK(t.sfa.strong.sigma1 == 0.25);
  CHECK(t.sfa.strong.sigma2 == 0.1);
  CHECK(cfg.folds.n_folds == 5);
  CHECK(cfg.folds.validation_fraction == 0.2);
  CHECK(cfg.folds.partition.shards_per_speaker == 4);
  CHECK(cfg.folds.partition.classes_per_shard == 3);
}

TEST_CASE("key=value parsing") {
  const auto kv = parse("# comment\n\n  train.lr = 0.01  \nmodel.hidden=64, 32 # trailing\n");
  CHECK(kv.at("train.lr") == "0.01");
  CHECK(kv.at("model.hidden") == "64, 32");
  const auto cfg = experiment_config_from(kv);
  CHECK(cfg.train.lr == 0.01);
  CHECK(cfg.train.hidden == std::vector<std::size_t>{64, 32});

  CHECK_THROWS_AS(parse("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(parse("=1\n"), ConfigError);
}

TEST_CASE("bad values and unknown keys are config errors") {
  CHECK_THROWS_AS(experiment_config_from({{"train.lr", "fast"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from({{"train.lr", "-1"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from({{"train.batch_size", "0"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from({{"train.algorithm", "fedprox"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from({{"train.participation", "1.5"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from({{"pl.kappa", "0"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from({{"lr", "0.1"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from({{"data.synth.colour", "red"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from({{"experiment.runs", "semi,magic"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from({{"experiment.folds", "6"}}), ConfigError);
  CHECK_THROWS_AS(load_key_values("/nonexistent/fedser.conf"), ConfigError);
}

TEST_CASE("to_key_values round-trips through the parser") {
  KeyValues kv{{"train.lr", "0.003"},       {"train.rounds", "40"},         {"seed", "9"},
               {"data.synth.speakers", "6"}, {"experiment.runs", "semi,fedavg"}, {"pl.kappa", "0.02"},
               {"data.synth.proportions", "1099,947,608,289"}};
  const auto cfg = experiment_config_from(kv);
  const auto dumped = to_key_values(cfg);
  const auto again = experiment_config_from(dumped);
  CHECK(to_key_values(again) == dumped);
  CHECK(again.train.lr == 0.003);
  CHECK(again.synth.proportions.size() == 4);
  CHECK(again.runs == std::vector<std::string>{"semi", "fedavg"});
}

TEST_CASE("fingerprint is stable and sensitive") {
  const auto a = to_key_values(experiment_config_from({}));
  auto b = a;
  CHECK(fingerprint(a) == fingerprint(b));
  CHECK(fingerprint(a).size() == 16);
  b["train.lr"] = "0.001";
  CHECK(fingerprint(a) != fingerprint(b));
}

TEST_CASE("synthetic spec keys") {
  const auto spec = synth_spec_from({{"speakers", "3"}, {"dim", "5"}, {"seed", "4"}, {"proportions", "1,2,3,4"}});
  CHECK(spec.speakers == 3);
  CHECK(spec.dim == 5);
  CHECK(spec.proportions == std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_AS(synth_spec_from({{"speakerz", "3"}}), ConfigError);
  CHECK_THROWS_AS(synth_spec_from({{"classes", "0"}}), ConfigError);
}

TEST_CASE("list parsing") {
  CHECK(parse_size_list("k", "1,2, 3") == std::vector<std::size_t>{1, 2, 3});
  CHECK(parse_double_list("k", "0.5") == std::vector<double>{0.5});
  CHECK_THROWS_AS(parse_size_list("k", "1,x"), ConfigError);
}
