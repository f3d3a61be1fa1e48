#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <type_traits>

#include "fedser/data.hpp"
#include "fedser/errors.hpp"
#include "fedser/metrics.hpp"
#include "fedser/rng.hpp"

using namespace fedser;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fedser_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

FeatureRecord rec(const std::string& utt, const std::string& spk, std::optional<int> label,
                  std::vector<double> f = {0.0}) {
  return {utt, spk, label, std::move(f)};
}

std::multiset<std::string> ids_of(const std::vector<FeatureRecord>& records) {
  std::multiset<std::string> out;
  for (const auto& r : records) out.insert(r.utterance_id);
  return out;
}

std::vector<FeatureRecord> random_speaker_corpus(std::size_t speakers, std::size_t per_speaker, int classes,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FeatureRecord> out;
  for (std::size_t s = 0; s < speakers; ++s) {
    for (std::size_t i = 0; i < per_speaker; ++i) {
      // Guarantee every class at least once per speaker.
      const int label = i < static_cast<std::size_t>(classes) ? static_cast<int>(i)
                                                              : static_cast<int>(rng.index(classes));
      out.push_back(rec("s" + std::to_string(s) + "_" + std::to_string(i), "s" + std::to_string(s), label,
                        {rng.normal(0, 1), rng.normal(0, 1)}));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("feature CSV round-trips exactly") {
  const std::vector<FeatureRecord> records{
      rec("a", "spk1", 0, {0.1, -2.5, 1e-300}),
      rec("b", "spk1", std::nullopt, {1.0 / 3.0, 0.0, -0.0}),
      rec("c", "spk2", 3, {123456.789, 2.0, 5e-7}),
  };
  const auto path = temp_file("roundtrip.csv");
  write_features(path, records);
  const auto back = load_features(path);
  REQUIRE(back.size() == 3);
  CHECK(back == records);
}

TEST_CASE("short row is a schema error naming the line") {
  const auto path = temp_file("short.csv");
  write_text(path, "utterance_id,speaker_id,label,f0,f1,f2\na,s,0,1,2,3\nb,s,1,1,2\n");
  try {
    load_features(path);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("malformed values are parse errors") {
  const auto path = temp_file("bad.csv");
  write_text(path, "utterance_id,speaker_id,label,f0\na,s,0,abc\n");
  CHECK_THROWS_AS(load_features(path), ParseError);
  write_text(path, "utterance_id,speaker_id,label,f0\na,s,x,1.0\n");
  CHECK_THROWS_AS(load_features(path), ParseError);
  write_text(path, "a,s,0,1.0\n");
  CHECK_THROWS_AS(load_features(path), Error);
  CHECK_THROWS_AS(load_features(temp_file("does_not_exist.csv")), Error);
}

TEST_CASE("2943-row file keeps the IEMOCAP class histogram") {
  const std::vector<std::size_t> counts{1099, 947, 608, 289};
  std::vector<FeatureRecord> records;
  for (int c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      records.push_back(rec("u" + std::to_string(records.size()), "s" + std::to_string(i % 10), c, {1.0, 2.0}));
    }
  }
  const auto path = temp_file("iemocap.csv");
  write_features(path, records);
  const auto back = load_features(path);
  REQUIRE(back.size() == 2943);
  std::vector<std::size_t> hist(4, 0);
  for (const auto& r : back) ++hist[static_cast<std::size_t>(*r.label)];
  CHECK(hist == counts);
}

TEST_CASE("z-norm examples") {
  std::vector<FeatureRecord> single{rec("a", "s", 0, {3.0, -1.0})};
  znorm_group(single);
  CHECK(single[0].features == std::vector<double>{0.0, 0.0});

  std::vector<FeatureRecord> pair{rec("a", "s", 0, {2.0, -7.0}), rec("b", "s", 0, {5.0, 1.0})};
  znorm_group(pair);
  CHECK(pair[0].features[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(pair[1].features[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pair[0].features[1] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(pair[1].features[1] == doctest::Approx(1.0).epsilon(1e-15));

  std::vector<FeatureRecord> constant{rec("a", "s", 0, {4.0, 1.0}), rec("b", "s", 0, {4.0, 2.0})};
  znorm_group(constant);
  CHECK(constant[0].features[0] == 0.0);
  CHECK(constant[1].features[0] == 0.0);

  std::vector<FeatureRecord> empty;
  CHECK_THROWS_AS(znorm_group(empty), Error);
}

TEST_CASE("z-norm moments and idempotence (property)") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng.index(50);
    const std::size_t d = 1 + rng.index(8);
    std::vector<FeatureRecord> group;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> f(d);
      for (auto& v : f) v = rng.normal(rng.uniform(-5, 5), 3.0);
      group.push_back(rec(std::to_string(i), "s", 0, f));
    }
    znorm_group(group);
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (const auto& r : group) mean += r.features[j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (const auto& r : group) var += (r.features[j] - mean) * (r.features[j] - mean);
      var /= static_cast<double>(n);
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
    }
    auto again = group;
    znorm_group(again);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(again[i].features[j] - group[i].features[j]) < 1e-9);
    }
  }
}

TEST_CASE("znorm_per_client normalizes each group independently") {
  std::vector<std::vector<FeatureRecord>> groups{
      {rec("a", "s1", 0, {0.0}), rec("b", "s1", 0, {10.0})},
      {rec("c", "s2", 0, {100.0}), rec("d", "s2", 0, {102.0})},
  };
  const auto out = znorm_per_client(groups);
  CHECK(out[0][0].features[0] == doctest::Approx(-1.0));
  CHECK(out[1][1].features[0] == doctest::Approx(1.0));
}

TEST_CASE("partition: speaker with three classes gives identical shards split round-robin") {
  std::vector<FeatureRecord> records;
  for (int i = 0; i < 12; ++i) records.push_back(rec("u" + std::to_string(i), "spk", i % 3));
  const auto shards = partition_noniid(records, PartitionOptions{}, 7);
  REQUIRE(shards.size() == 4);
  for (const auto& s : shards) {
    auto classes = s.classes;
    std::sort(classes.begin(), classes.end());
    CHECK(classes == std::vector<int>{0, 1, 2});
    CHECK(s.records.size() == 3);
  }
}

TEST_CASE("partition: four-class speaker cycles through distinct 3-subsets") {
  std::vector<FeatureRecord> records;
  for (int i = 0; i < 40; ++i) records.push_back(rec("u" + std::to_string(i), "spk", i % 4));
  const auto shards = partition_noniid(records, PartitionOptions{}, 3);
  REQUIRE(shards.size() == 4);
  std::set<std::vector<int>> subsets;
  for (const auto& s : shards) {
    auto classes = s.classes;
    std::sort(classes.begin(), classes.end());
    subsets.insert(classes);
    std::set<int> seen;
    for (const auto& r : s.records) seen.insert(*r.label);
    CHECK(seen.size() == 3);
    CHECK(std::set<int>(classes.begin(), classes.end()) == seen);
  }
  CHECK(subsets.size() == 4);
}

TEST_CASE("partition conserves the multiset and respects constraints (property)") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto records = random_speaker_corpus(10, 60, 4, seed);
    const auto shards = partition_noniid(records, PartitionOptions{}, seed);
    std::vector<FeatureRecord> all;
    for (const auto& s : shards) {
      std::set<int> labels;
      for (const auto& r : s.records) {
        CHECK(r.speaker_id == s.speaker_id);
        labels.insert(*r.label);
        all.push_back(r);
      }
      CHECK(labels.size() <= 3);
      CHECK_FALSE(s.records.empty());
    }
    CHECK(ids_of(all) == ids_of(records));
    CHECK(partition_noniid(records, PartitionOptions{}, seed).size() == shards.size());
  }
}

TEST_CASE("partition: speaker with fewer classes than a shard needs") {
  std::vector<FeatureRecord> records;
  for (int i = 0; i < 8; ++i) records.push_back(rec("u" + std::to_string(i), "spk", i % 2));
  const auto shards = partition_noniid(records, PartitionOptions{}, 1);
  std::vector<FeatureRecord> all;
  for (const auto& s : shards) {
    CHECK(s.classes.size() == 2);
    all.insert(all.end(), s.records.begin(), s.records.end());
  }
  CHECK(ids_of(all) == ids_of(records));
}

TEST_CASE("mask_labels examples") {
  std::vector<FeatureRecord> pool;
  for (int i = 0; i < 10; ++i) pool.push_back(rec("u" + std::to_string(i), "s", 2));
  const auto m = mask_labels(pool, 0.2, 5);
  CHECK(m.labeled.size() == 2);
  CHECK(m.unlabeled.size() == 8);
  CHECK(m.sealed.size() == 8);
  for (const auto& r : m.unlabeled) {
    CHECK_FALSE(r.label.has_value());
    CHECK(m.sealed.contains(r.utterance_id));
  }

  const auto all = mask_labels(pool, 1.0, 5);
  CHECK(all.unlabeled.empty());
  CHECK(all.labeled.size() == 10);

  std::vector<FeatureRecord> tiny{rec("x", "s", 0), rec("y", "s", 1), rec("z", "s", 1)};
  const auto floor = mask_labels(tiny, 0.1, 1);
  CHECK(floor.labeled.size() == 2);

  CHECK_THROWS_AS(mask_labels(pool, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(mask_labels(pool, 1.5, 1), ConfigError);
}

TEST_CASE("mask_labels is stratified and conserving (property)") {
  Rng rng(9);
  for (int trial = 0; trial < 40; ++trial) {
    const auto pool = random_speaker_corpus(1, 5 + rng.index(80), 3, 100 + trial);
    const double rate = rng.uniform(0.05, 1.0);
    const auto m = mask_labels(pool, rate, trial);
    std::map<int, std::size_t> total, kept;
    for (const auto& r : pool) ++total[*r.label];
    for (const auto& r : m.labeled) ++kept[*r.label];
    for (const auto& [c, n] : total) {
      const double target = rate * static_cast<double>(n);
      CHECK(std::abs(static_cast<double>(kept[c]) - target) <= 1.0);
      CHECK(kept[c] >= 1);
    }
    auto combined = m.labeled;
    combined.insert(combined.end(), m.unlabeled.begin(), m.unlabeled.end());
    CHECK(ids_of(combined) == ids_of(pool));
    CHECK(m.sealed.size() == m.unlabeled.size());
  }
}

TEST_CASE("sealed labels need an evaluation key") {
  static_assert(!std::is_default_constructible_v<EvalKey>);
  static_assert(!std::is_constructible_v<EvalKey>);

  // The only key holder is the metrics code; reaching it from inside a
  // training scope must fail at run time.
  std::vector<LocalSample> samples{{"a", {0.0}}, {"b", {0.0}}};
  ClientPools pools(samples, {{0, 1}}, {1});
  pools.admit(1, 2);
  SealedLabels sealed;
  sealed.seal("b", 2);
  const std::vector<PseudoLabelAudit> audit{{&pools, &sealed}};
  CHECK(pseudo_label_accuracy(audit) == 1.0);
  {
    TrainingScope scope;
    CHECK(TrainingScope::active());
    CHECK_THROWS_AS(pseudo_label_accuracy(audit), AccessError);
  }
  CHECK_FALSE(TrainingScope::active());
}

TEST_CASE("synth: noiseless samples sit on the class means") {
  SynthSpec spec;
  spec.speakers = 3;
  spec.per_speaker = 20;
  spec.noise = 0.0;
  spec.speaker_shift = 0.0;
  const auto records = synth_generate(spec, 1);
  REQUIRE(records.size() == 60);
  std::map<int, std::vector<double>> first;
  for (const auto& r : records) {
    auto [it, inserted] = first.emplace(*r.label, r.features);
    if (!inserted) CHECK(r.features == it->second);
  }
  CHECK(first.size() == 4);
  // Means are pairwise class_sep apart.
  for (const auto& [a, fa] : first) {
    for (const auto& [b, fb] : first) {
      if (a >= b) continue;
      double d2 = 0.0;
      for (std::size_t j = 0; j < fa.size(); ++j) d2 += (fa[j] - fb[j]) * (fa[j] - fb[j]);
      CHECK(std::sqrt(d2) == doctest::Approx(spec.class_sep).epsilon(1e-9));
    }
  }
}

TEST_CASE("synth: IEMOCAP proportions") {
  SynthSpec spec;
  spec.speakers = 1;
  spec.per_speaker = 2943;
  spec.proportions = {1099, 947, 608, 289};
  const auto records = synth_generate(spec, 2);
  std::vector<std::size_t> hist(4, 0);
  for (const auto& r : records) ++hist[static_cast<std::size_t>(*r.label)];
  CHECK(hist == std::vector<std::size_t>{1099, 947, 608, 289});

  spec.speakers = 10;
  spec.per_speaker = 300;
  const auto many = synth_generate(spec, 2);
  std::fill(hist.begin(), hist.end(), 0);
  for (const auto& r : many) ++hist[static_cast<std::size_t>(*r.label)];
  const std::vector<double> expected{0.373, 0.322, 0.207, 0.098};
  for (std::size_t c = 0; c < 4; ++c) CHECK(static_cast<double>(hist[c]) / 3000.0 == doctest::Approx(expected[c]).epsilon(0.01));
}

TEST_CASE("synth: well-separated classes are nearest-centroid separable") {
  SynthSpec spec;
  spec.class_sep = 20.0;
  spec.noise = 1.0;
  spec.speaker_shift = 0.5;
  const auto train = synth_generate(spec, 3);
  std::vector<std::vector<double>> centroid(4, std::vector<double>(spec.dim, 0.0));
  std::vector<double> count(4, 0.0);
  for (const auto& r : train) {
    const auto c = static_cast<std::size_t>(*r.label);
    for (std::size_t j = 0; j < spec.dim; ++j) centroid[c][j] += r.features[j];
    ++count[c];
  }
  for (std::size_t c = 0; c < 4; ++c) {
    for (auto& v : centroid[c]) v /= count[c];
  }
  // Held-out draw: same class means, different noise stream.
  const auto test = synth_generate(spec, 3);
  std::vector<int> pred, truth;
  Rng noise(99);
  for (const auto& r : test) {
    std::vector<double> x = r.features;
    for (auto& v : x) v += noise.normal(0.0, 0.5);
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < 4; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < spec.dim; ++j) d += (x[j] - centroid[c][j]) * (x[j] - centroid[c][j]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    pred.push_back(best);
    truth.push_back(*r.label);
  }
  CHECK(uar(pred, truth, 4) >= 0.99);
}

TEST_CASE("synth: invalid specs") {
  SynthSpec spec;
  spec.speakers = 0;
  CHECK_THROWS_AS(synth_generate(spec, 0), ConfigError);
  spec = {};
  spec.proportions = {1, 2};
  CHECK_THROWS_AS(synth_generate(spec, 0), ConfigError);
  spec = {};
  spec.noise = -1.0;
  CHECK_THROWS_AS(synth_generate(spec, 0), ConfigError);
}

TEST_CASE("make_folds: five speakers, five folds") {
  const auto records = random_speaker_corpus(5, 40, 4, 1);
  const auto folds = make_folds(records, FoldOptions{}, 11);
  REQUIRE(folds.size() == 5);
  std::multiset<std::string> test_speakers;
  for (const auto& f : folds) {
    std::set<std::string> speakers;
    for (const auto& r : f.test_records) speakers.insert(r.speaker_id);
    CHECK(speakers.size() == 1);
    test_speakers.insert(speakers.begin(), speakers.end());
    CHECK(f.class_count == 4);
    CHECK(f.feature_dim == 2);
  }
  CHECK(test_speakers.size() == 5);
  CHECK(std::set<std::string>(test_speakers.begin(), test_speakers.end()).size() == 5);
}

TEST_CASE("make_folds: test speakers partition the speaker set and stay disjoint from clients") {
  const auto records = random_speaker_corpus(10, 50, 4, 2);
  const auto folds = make_folds(records, FoldOptions{}, 5);
  REQUIRE(folds.size() == 5);
  std::multiset<std::string> test_speakers;
  for (const auto& f : folds) {
    std::set<std::string> held_out;
    for (const auto& r : f.test_records) held_out.insert(r.speaker_id);
    test_speakers.insert(held_out.begin(), held_out.end());

    std::vector<FeatureRecord> client_records;
    for (const auto& c : f.clients) {
      std::set<std::string> speakers;
      std::set<std::string> train_ids;
      for (const auto& r : c.train) {
        speakers.insert(r.speaker_id);
        train_ids.insert(r.utterance_id);
      }
      for (const auto& r : c.validation) {
        speakers.insert(r.speaker_id);
        CHECK(train_ids.count(r.utterance_id) == 0);
      }
      CHECK(speakers.size() == 1);
      CHECK(*speakers.begin() == c.speaker_id);
      CHECK(held_out.count(c.speaker_id) == 0);
      client_records.insert(client_records.end(), c.train.begin(), c.train.end());
      client_records.insert(client_records.end(), c.validation.begin(), c.validation.end());
    }
    // Every record appears once: in a client or in the test set.
    auto all = client_records;
    all.insert(all.end(), f.test_records.begin(), f.test_records.end());
    CHECK(ids_of(all) == ids_of(records));
  }
  std::set<std::string> distinct(test_speakers.begin(), test_speakers.end());
  CHECK(distinct.size() == 10);
  CHECK(test_speakers.size() == 10);
}

TEST_CASE("make_folds: validation is about a fifth of each client") {
  const auto records = random_speaker_corpus(6, 120, 4, 3);
  FoldOptions opts;
  opts.n_folds = 3;
  const auto folds = make_folds(records, opts, 8);
  for (const auto& f : folds) {
    for (const auto& c : f.clients) {
      const double n = static_cast<double>(c.train.size() + c.validation.size());
      CHECK(std::abs(static_cast<double>(c.validation.size()) - 0.2 * n) <= 3.0);
    }
  }
}

TEST_CASE("make_folds: too few speakers") {
  const auto records = random_speaker_corpus(3, 20, 4, 1);
  CHECK_THROWS_AS(make_folds(records, FoldOptions{}, 0), ConfigError);
}

TEST_CASE("znorm_dataset normalizes clients and test speakers separately") {
  const auto records = random_speaker_corpus(5, 40, 4, 6);
  auto fold = znorm_dataset(make_folds(records, FoldOptions{}, 1)[0]);
  for (const auto& c : fold.clients) {
    double mean = 0.0;
    std::size_t n = 0;
    for (const auto* part : {&c.train, &c.validation}) {
      for (const auto& r : *part) {
        mean += r.features[0];
        ++n;
      }
    }
    CHECK(std::abs(mean / static_cast<double>(n)) < 1e-9);
  }
  double test_mean = 0.0;
  for (const auto& r : fold.test_records) test_mean += r.features[0];
  CHECK(std::abs(test_mean / static_cast<double>(fold.test_records.size())) < 1e-9);
}
