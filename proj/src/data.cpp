#include "fedser/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fedser/errors.hpp"
#include "fedser/rng.hpp"

namespace fedser {

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double(std::string_view text, std::size_t line) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ParseError("invalid feature value '" + std::string(text) + "'", line);
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <class T>
void shuffle_with(std::vector<T>& items, Rng& rng) {
  std::shuffle(items.begin(), items.end(), rng.engine());
}

}  // namespace

std::vector<FeatureRecord> load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open feature file " + path.string());

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("missing header", line_no);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.size() < 4 || header[0] != "utterance_id" || header[1] != "speaker_id" || header[2] != "label") {
    throw ParseError("header must start with utterance_id,speaker_id,label and list at least one feature",
                     line_no);
  }
  const std::size_t dim = header.size() - 3;

  std::vector<FeatureRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != dim + 3) {
      throw SchemaError("expected " + std::to_string(dim) + " features, found " +
                            std::to_string(cells.size() < 3 ? 0 : cells.size() - 3),
                        line_no);
    }
    FeatureRecord rec;
    rec.utterance_id = std::string(cells[0]);
    rec.speaker_id = std::string(cells[1]);
    if (rec.utterance_id.empty() || rec.speaker_id.empty()) throw ParseError("empty identifier", line_no);
    if (!cells[2].empty()) {
      int label = 0;
      const auto* end = cells[2].data() + cells[2].size();
      auto [ptr, ec] = std::from_chars(cells[2].data(), end, label);
      if (ec != std::errc() || ptr != end || label < 0) {
        throw ParseError("invalid label '" + std::string(cells[2]) + "'", line_no);
      }
      rec.label = label;
    }
    rec.features.reserve(dim);
    for (std::size_t j = 0; j < dim; ++j) rec.features.push_back(parse_double(cells[3 + j], line_no));
    records.push_back(std::move(rec));
  }
  return records;
}

void write_features(const std::filesystem::path& path, const std::vector<FeatureRecord>& records) {
  if (records.empty()) throw Error("refusing to write an empty feature file");
  const std::size_t dim = records.front().features.size();
  std::ofstream out(path);
  if (!out) throw Error("cannot write feature file " + path.string());
  out << "utterance_id,speaker_id,label";
  for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
  out << '\n';
  for (const auto& rec : records) {
    if (rec.features.size() != dim) throw ShapeError("inconsistent feature dimension in " + rec.utterance_id);
    out << rec.utterance_id << ',' << rec.speaker_id << ',';
    if (rec.label) out << *rec.label;
    for (double v : rec.features) out << ',' << format_double(v);
    out << '\n';
  }
}

void znorm_group(std::vector<FeatureRecord>& group) {
  if (group.empty()) throw ConfigError("z-normalization of an empty group");
  const std::size_t dim = group.front().features.size();
  const double n = static_cast<double>(group.size());
  for (std::size_t d = 0; d < dim; ++d) {
    double mean = 0.0;
    for (const auto& r : group) mean += r.features[d];
    mean /= n;
    double var = 0.0;
    for (const auto& r : group) var += (r.features[d] - mean) * (r.features[d] - mean);
    const double sd = std::sqrt(var / n);
    // Rounding in the mean leaves a residual spread on constant columns.
    const bool degenerate = sd <= 1e-12 * std::max(1.0, std::abs(mean));
    for (auto& r : group) r.features[d] = degenerate ? 0.0 : (r.features[d] - mean) / sd;
  }
}

std::vector<std::vector<FeatureRecord>> znorm_per_client(std::vector<std::vector<FeatureRecord>> groups) {
  for (auto& g : groups) znorm_group(g);
  return groups;
}

std::vector<ClientShard> partition_noniid(const std::vector<FeatureRecord>& records,
                                          const PartitionOptions& options, std::uint64_t seed) {
  if (options.shards_per_speaker == 0 || options.classes_per_shard == 0) {
    throw ConfigError("shards_per_speaker and classes_per_shard must be positive");
  }

  // speaker -> class -> record indices (input order)
  std::map<std::string, std::map<int, std::vector<std::size_t>>> by_speaker;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) {
      spdlog::warn("partition: skipping unlabeled record {}", records[i].utterance_id);
      continue;
    }
    by_speaker[records[i].speaker_id][*records[i].label].push_back(i);
  }

  std::vector<ClientShard> shards;
  std::uint64_t speaker_ordinal = 0;
  for (auto& [speaker, classes] : by_speaker) {
    Rng rng = Rng::derive(seed, speaker_ordinal++);
    std::vector<int> perm;
    for (const auto& [c, _] : classes) perm.push_back(c);
    shuffle_with(perm, rng);

    const std::size_t n = perm.size();
    const std::size_t k = options.classes_per_shard;
    const std::size_t shard_count = options.shards_per_speaker;
    if (n < k) {
      spdlog::warn("partition: speaker {} has only {} classes, shards reduced to the available ones", speaker, n);
    }

    // Cyclic windows over the permuted classes; for n = 4, k = 3 the four
    // windows are exactly the four 3-subsets.
    std::vector<std::vector<int>> assigned(shard_count);
    for (std::size_t s = 0; s < shard_count; ++s) {
      if (n <= k) {
        assigned[s] = perm;
      } else {
        for (std::size_t i = 0; i < k; ++i) assigned[s].push_back(perm[(s + i) % n]);
      }
    }

    std::vector<std::vector<std::size_t>> members(shard_count);
    for (std::size_t ci = 0; ci < n; ++ci) {
      const int c = perm[ci];
      std::vector<std::size_t> holders;
      for (std::size_t s = 0; s < shard_count; ++s) {
        if (std::find(assigned[s].begin(), assigned[s].end(), c) != assigned[s].end()) holders.push_back(s);
      }
      auto idx = classes[c];
      if (holders.empty()) {
        spdlog::warn("partition: speaker {} class {} is not covered by any shard; {} records dropped", speaker, c,
                     idx.size());
        continue;
      }
      shuffle_with(idx, rng);
      for (std::size_t j = 0; j < idx.size(); ++j) members[holders[(j + ci) % holders.size()]].push_back(idx[j]);
    }

    for (std::size_t s = 0; s < shard_count; ++s) {
      if (members[s].empty()) continue;
      std::sort(members[s].begin(), members[s].end());
      ClientShard shard;
      shard.speaker_id = speaker;
      shard.shard_index = s;
      shard.classes = assigned[s];
      std::sort(shard.classes.begin(), shard.classes.end());
      for (std::size_t i : members[s]) shard.records.push_back(records[i]);
      shards.push_back(std::move(shard));
    }
  }
  return shards;
}

namespace {
thread_local int training_depth = 0;
}  // namespace

TrainingScope::TrainingScope() { ++training_depth; }
TrainingScope::~TrainingScope() { --training_depth; }
bool TrainingScope::active() { return training_depth > 0; }

int SealedLabels::reveal(const std::string& utterance_id, const EvalKey&) const {
  if (TrainingScope::active()) throw AccessError("sealed labels read from a training code path");
  auto it = labels_.find(utterance_id);
  if (it == labels_.end()) throw Error("no sealed label for " + utterance_id);
  return it->second;
}

LabelMask mask_labels(const std::vector<FeatureRecord>& pool, double label_rate, std::uint64_t seed) {
  if (!(label_rate > 0.0 && label_rate <= 1.0)) throw ConfigError("label rate must be in (0, 1]");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].label) by_class[*pool[i].label].push_back(i);
  }

  Rng rng(seed);
  std::vector<bool> keep(pool.size(), false);
  for (auto& [c, idx] : by_class) {
    const auto target = static_cast<std::size_t>(std::llround(label_rate * static_cast<double>(idx.size())));
    const std::size_t kept = std::clamp<std::size_t>(target, 1, idx.size());
    shuffle_with(idx, rng);
    for (std::size_t j = 0; j < kept; ++j) keep[idx[j]] = true;
  }

  LabelMask mask;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (keep[i]) {
      mask.labeled.push_back(pool[i]);
      continue;
    }
    FeatureRecord hidden = pool[i];
    if (hidden.label) mask.sealed.seal(hidden.utterance_id, *hidden.label);
    hidden.label.reset();
    mask.unlabeled.push_back(std::move(hidden));
  }
  return mask;
}

void SynthSpec::validate() const {
  if (speakers == 0 || per_speaker == 0 || classes == 0 || dim == 0) {
    throw ConfigError("synthetic spec counts must be positive");
  }
  if (classes > dim) throw ConfigError("synthetic spec needs classes <= dim for orthogonal class means");
  if (!(class_sep >= 0.0 && speaker_shift >= 0.0 && noise >= 0.0)) {
    throw ConfigError("class_sep, speaker_shift and noise must be non-negative");
  }
  if (!proportions.empty()) {
    if (proportions.size() != classes) throw ConfigError("proportions must list one weight per class");
    double total = 0.0;
    for (double p : proportions) {
      if (!(p >= 0.0)) throw ConfigError("proportions must be non-negative");
      total += p;
    }
    if (!(total > 0.0)) throw ConfigError("proportions must not all be zero");
  }
}

std::vector<FeatureRecord> synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);

  // Orthonormal directions scaled so every pair of class means is class_sep apart.
  std::vector<std::vector<double>> means;
  while (means.size() < spec.classes) {
    std::vector<double> v(spec.dim);
    for (double& x : v) x = rng.normal(0.0, 1.0);
    for (const auto& u : means) {
      const double proj = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
      for (std::size_t d = 0; d < spec.dim; ++d) v[d] -= proj * u[d];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    means.push_back(std::move(v));
  }
  const double scale = spec.class_sep / std::sqrt(2.0);
  for (auto& m : means) {
    for (double& x : m) x *= scale;
  }

  // Per-speaker class counts by largest remainder.
  std::vector<double> weights = spec.proportions;
  if (weights.empty()) weights.assign(spec.classes, 1.0);
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(spec.classes);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const double exact = static_cast<double>(spec.per_speaker) * weights[c] / total;
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < spec.per_speaker; ++i, ++assigned) ++counts[remainders[i].second];

  std::vector<FeatureRecord> records;
  records.reserve(spec.speakers * spec.per_speaker);
  for (std::size_t s = 0; s < spec.speakers; ++s) {
    std::vector<double> offset(spec.dim, 0.0);
    if (spec.speaker_shift > 0.0) {
      double norm = 0.0;
      for (double& x : offset) {
        x = rng.normal(0.0, 1.0);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (double& x : offset) x *= spec.speaker_shift / norm;
    }

    std::vector<int> labels;
    for (std::size_t c = 0; c < spec.classes; ++c) labels.insert(labels.end(), counts[c], static_cast<int>(c));
    shuffle_with(labels, rng);

    std::ostringstream spk;
    spk << "spk" << s;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      FeatureRecord rec;
      rec.speaker_id = spk.str();
      rec.utterance_id = spk.str() + "_utt" + std::to_string(i);
      rec.label = labels[i];
      rec.features.resize(spec.dim);
      const auto& mu = means[static_cast<std::size_t>(labels[i])];
      for (std::size_t d = 0; d < spec.dim; ++d) {
        double x = mu[d] + offset[d];
        if (spec.noise > 0.0) x += spec.noise * rng.normal(0.0, 1.0);
        rec.features[d] = x;
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

std::vector<PartitionedDataset> make_folds(const std::vector<FeatureRecord>& records, const FoldOptions& options,
                                           std::uint64_t seed) {
  if (options.n_folds == 0) throw ConfigError("n_folds must be positive");
  if (!(options.validation_fraction >= 0.0 && options.validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must be in [0, 1)");
  }
  if (records.empty()) throw ConfigError("no records to fold");

  std::set<std::string> speaker_set;
  int max_label = -1;
  for (const auto& r : records) {
    speaker_set.insert(r.speaker_id);
    if (r.label) max_label = std::max(max_label, *r.label);
  }
  if (speaker_set.size() < options.n_folds) {
    throw ConfigError("need at least " + std::to_string(options.n_folds) + " speakers, found " +
                      std::to_string(speaker_set.size()));
  }
  const std::size_t class_count =
      options.class_count > 0 ? options.class_count : static_cast<std::size_t>(max_label + 1);
  if (max_label >= static_cast<int>(class_count)) throw LabelError("label outside configured class count");

  Rng rng(seed);
  std::vector<std::string> speakers(speaker_set.begin(), speaker_set.end());
  shuffle_with(speakers, rng);
  std::map<std::string, std::size_t> fold_of;
  for (std::size_t i = 0; i < speakers.size(); ++i) fold_of[speakers[i]] = i % options.n_folds;

  const auto shards = partition_noniid(records, options.partition, seed);

  std::vector<PartitionedDataset> folds;
  for (std::size_t f = 0; f < options.n_folds; ++f) {
    PartitionedDataset fold;
    fold.class_count = class_count;
    fold.feature_dim = records.front().features.size();
    for (const auto& r : records) {
      if (fold_of[r.speaker_id] == f && r.label) fold.test_records.push_back(r);
    }

    int next_id = 0;
    for (const auto& shard : shards) {
      if (fold_of[shard.speaker_id] == f) continue;
      ClientData client;
      client.client_id = next_id++;
      client.speaker_id = shard.speaker_id;

      // Stratified validation split.
      Rng split_rng = Rng::derive(seed, (f + 1) * 1000003ULL + static_cast<std::uint64_t>(client.client_id));
      std::map<int, std::vector<std::size_t>> by_class;
      for (std::size_t i = 0; i < shard.records.size(); ++i) by_class[*shard.records[i].label].push_back(i);
      std::vector<bool> is_val(shard.records.size(), false);
      for (auto& [c, idx] : by_class) {
        const auto n_val = static_cast<std::size_t>(
            std::llround(options.validation_fraction * static_cast<double>(idx.size())));
        shuffle_with(idx, split_rng);
        for (std::size_t j = 0; j < std::min(n_val, idx.size()); ++j) is_val[idx[j]] = true;
      }
      for (std::size_t i = 0; i < shard.records.size(); ++i) {
        (is_val[i] ? client.validation : client.train).push_back(shard.records[i]);
      }
      fold.clients.push_back(std::move(client));
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

PartitionedDataset znorm_dataset(PartitionedDataset data) {
  for (auto& client : data.clients) {
    std::vector<FeatureRecord> all = client.train;
    all.insert(all.end(), client.validation.begin(), client.validation.end());
    znorm_group(all);
    std::copy(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(client.train.size()), client.train.begin());
    std::copy(all.begin() + static_cast<std::ptrdiff_t>(client.train.size()), all.end(), client.validation.begin());
  }
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < data.test_records.size(); ++i) by_speaker[data.test_records[i].speaker_id].push_back(i);
  for (const auto& [speaker, idx] : by_speaker) {
    std::vector<FeatureRecord> group;
    for (std::size_t i : idx) group.push_back(data.test_records[i]);
    znorm_group(group);
    for (std::size_t j = 0; j < idx.size(); ++j) data.test_records[idx[j]] = std::move(group[j]);
  }
  return data;
}

}  // namespace fedser
