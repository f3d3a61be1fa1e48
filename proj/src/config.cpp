#include "fedser/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "fedser/errors.hpp"

namespace fedser {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": '" + value + "' is not a number");
  return out;
}

long long to_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": '" + value + "' is not an integer");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& value) {
  const long long v = to_int(key, value);
  if (v < 0) throw ConfigError(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <class T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += f(items[i]);
  }
  return out;
}

}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(std::string_view(text).substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = trim(std::string_view(text).substr(eq + 1));
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_key_values(in, path.string());
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(value)) out.push_back(to_size(key, item));
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& item : split_list(value)) out.push_back(to_double(key, item));
  return out;
}

const std::vector<std::string>& known_runs() {
  static const std::vector<std::string> runs{"centralized", "fedavg", "scaffold", "supervised", "semi"};
  return runs;
}

SynthSpec synth_spec_from(const KeyValues& kv, const std::string& prefix) {
  SynthSpec spec;
  for (const auto& [full_key, value] : kv) {
    if (full_key.rfind(prefix, 0) != 0) continue;
    const std::string key = full_key.substr(prefix.size());
    if (key == "speakers") {
      spec.speakers = to_size(full_key, value);
    } else if (key == "per_speaker") {
      spec.per_speaker = to_size(full_key, value);
    } else if (key == "classes") {
      spec.classes = to_size(full_key, value);
    } else if (key == "dim") {
      spec.dim = to_size(full_key, value);
    } else if (key == "class_sep") {
      spec.class_sep = to_double(full_key, value);
    } else if (key == "speaker_shift") {
      spec.speaker_shift = to_double(full_key, value);
    } else if (key == "noise") {
      spec.noise = to_double(full_key, value);
    } else if (key == "proportions") {
      spec.proportions = parse_double_list(full_key, value);
    } else if (prefix.empty() && key == "seed") {
      // consumed by the caller
    } else {
      throw ConfigError("unknown synthetic spec key '" + full_key + "'");
    }
  }
  spec.validate();
  return spec;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (features_path.empty()) synth.validate();
  if (folds.n_folds == 0) throw ConfigError("experiment.n_folds must be positive");
  if (folds_to_run == 0 || folds_to_run > folds.n_folds) {
    throw ConfigError("experiment.folds must be in [1, experiment.n_folds]");
  }
  if (runs.empty()) throw ConfigError("experiment.runs is empty");
  for (const auto& r : runs) {
    if (std::find(known_runs().begin(), known_runs().end(), r) == known_runs().end()) {
      throw ConfigError("unknown run '" + r + "' in experiment.runs");
    }
  }
}

ExperimentConfig experiment_config_from(const KeyValues& kv) {
  ExperimentConfig cfg;
  TrainConfig& t = cfg.train;
  KeyValues synth_keys;
  for (const auto& [key, value] : kv) {
    if (key == "seed") {
      t.seed = static_cast<std::uint64_t>(to_size(key, value));
    } else if (key == "model.hidden") {
      t.hidden = parse_size_list(key, value);
    } else if (key == "model.dropout") {
      t.dropout = to_double(key, value);
    } else if (key == "train.lr") {
      t.lr = to_double(key, value);
    } else if (key == "train.local_epochs") {
      t.local_epochs = static_cast<int>(to_int(key, value));
    } else if (key == "train.batch_size") {
      t.batch_size = to_size(key, value);
    } else if (key == "train.rounds") {
      t.rounds = static_cast<int>(to_int(key, value));
    } else if (key == "train.participation") {
      t.participation = to_double(key, value);
    } else if (key == "train.label_rate") {
      t.label_rate = to_double(key, value);
    } else if (key == "train.algorithm") {
      t.algorithm = parse_algorithm(value);
    } else if (key == "train.mode") {
      t.mode = parse_train_mode(value);
    } else if (key == "sfa.weak.sigma1") {
      t.sfa.weak.sigma1 = to_double(key, value);
    } else if (key == "sfa.strong.sigma1") {
      t.sfa.strong.sigma1 = to_double(key, value);
    } else if (key == "sfa.sigma2") {
      t.sfa.weak.sigma2 = t.sfa.strong.sigma2 = to_double(key, value);
    } else if (key == "pl.m") {
      t.pl.views = to_size(key, value);
    } else if (key == "pl.temperature") {
      t.pl.temperature = to_double(key, value);
    } else if (key == "pl.tau_start") {
      t.pl.tau_start = to_double(key, value);
    } else if (key == "pl.tau_end") {
      t.pl.tau_end = to_double(key, value);
    } else if (key == "pl.tau_ramp_epochs") {
      t.pl.tau_ramp_epochs = static_cast<int>(to_int(key, value));
    } else if (key == "pl.kappa") {
      t.pl.kappa = to_double(key, value);
    } else if (key == "pl.per_class_budget") {
      t.pl.per_class_budget = to_size(key, value);
    } else if (key == "data.features") {
      cfg.features_path = value;
    } else if (key == "data.seed") {
      cfg.data_seed = static_cast<std::uint64_t>(to_size(key, value));
    } else if (key == "data.shards_per_speaker") {
      cfg.folds.partition.shards_per_speaker = to_size(key, value);
    } else if (key == "data.classes_per_shard") {
      cfg.folds.partition.classes_per_shard = to_size(key, value);
    } else if (key == "data.classes") {
      cfg.folds.class_count = to_size(key, value);
    } else if (key.rfind("data.synth.", 0) == 0) {
      synth_keys[key] = value;
    } else if (key == "experiment.n_folds") {
      cfg.folds.n_folds = to_size(key, value);
    } else if (key == "experiment.folds") {
      cfg.folds_to_run = to_size(key, value);
    } else if (key == "experiment.validation_fraction") {
      cfg.folds.validation_fraction = to_double(key, value);
    } else if (key == "experiment.runs") {
      cfg.runs = split_list(value);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  cfg.synth = synth_spec_from(synth_keys, "data.synth.");
  cfg.validate();
  return cfg;
}

KeyValues to_key_values(const ExperimentConfig& cfg) {
  const TrainConfig& t = cfg.train;
  KeyValues kv;
  kv["seed"] = std::to_string(t.seed);
  kv["model.hidden"] = join<std::size_t>(t.hidden, [](const std::size_t& v) { return std::to_string(v); });
  kv["model.dropout"] = fmt_double(t.dropout);
  kv["train.lr"] = fmt_double(t.lr);
  kv["train.local_epochs"] = std::to_string(t.local_epochs);
  kv["train.batch_size"] = std::to_string(t.batch_size);
  kv["train.rounds"] = std::to_string(t.rounds);
  kv["train.participation"] = fmt_double(t.participation);
  kv["train.label_rate"] = fmt_double(t.label_rate);
  kv["train.algorithm"] = to_string(t.algorithm);
  kv["train.mode"] = to_string(t.mode);
  kv["sfa.weak.sigma1"] = fmt_double(t.sfa.weak.sigma1);
  kv["sfa.strong.sigma1"] = fmt_double(t.sfa.strong.sigma1);
  kv["sfa.sigma2"] = fmt_double(t.sfa.weak.sigma2);
  kv["pl.m"] = std::to_string(t.pl.views);
  kv["pl.temperature"] = fmt_double(t.pl.temperature);
  kv["pl.tau_start"] = fmt_double(t.pl.tau_start);
  kv["pl.tau_end"] = fmt_double(t.pl.tau_end);
  kv["pl.tau_ramp_epochs"] = std::to_string(t.pl.tau_ramp_epochs);
  kv["pl.kappa"] = fmt_double(t.pl.kappa);
  kv["pl.per_class_budget"] = std::to_string(t.pl.per_class_budget);
  kv["data.seed"] = std::to_string(cfg.data_seed);
  kv["data.shards_per_speaker"] = std::to_string(cfg.folds.partition.shards_per_speaker);
  kv["data.classes_per_shard"] = std::to_string(cfg.folds.partition.classes_per_shard);
  kv["data.classes"] = std::to_string(cfg.folds.class_count);
  if (!cfg.features_path.empty()) {
    kv["data.features"] = cfg.features_path;
  } else {
    const SynthSpec& s = cfg.synth;
    kv["data.synth.speakers"] = std::to_string(s.speakers);
    kv["data.synth.per_speaker"] = std::to_string(s.per_speaker);
    kv["data.synth.classes"] = std::to_string(s.classes);
    kv["data.synth.dim"] = std::to_string(s.dim);
    kv["data.synth.class_sep"] = fmt_double(s.class_sep);
    kv["data.synth.speaker_shift"] = fmt_double(s.speaker_shift);
    kv["data.synth.noise"] = fmt_double(s.noise);
    if (!s.proportions.empty()) {
      kv["data.synth.proportions"] = join<double>(s.proportions, [](const double& v) { return fmt_double(v); });
    }
  }
  kv["experiment.n_folds"] = std::to_string(cfg.folds.n_folds);
  kv["experiment.folds"] = std::to_string(cfg.folds_to_run);
  kv["experiment.validation_fraction"] = fmt_double(cfg.folds.validation_fraction);
  kv["experiment.runs"] = join<std::string>(cfg.runs, [](const std::string& v) { return v; });
  return kv;
}

std::string fingerprint(const KeyValues& kv) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [k, v] : kv) {
    feed(k);
    feed("=");
    feed(v);
    feed("\n");
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fedser
