#pragma once

// Feature ingestion, per-client normalization, speaker-sharded non-IID
// partitioning, label masking, fold construction and the synthetic corpus
// generator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fedser {

struct FeatureRecord {
  std::string utterance_id;
  std::string speaker_id;
  std::optional<int> label;  // empty for unlabeled rows
  std::vector<double> features;

  bool operator==(const FeatureRecord&) const = default;
};

// CSV with header `utterance_id,speaker_id,label,f0,...,f{D-1}`.
std::vector<FeatureRecord> load_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const std::vector<FeatureRecord>& records);

// Per-dimension z-score within one group; zero-variance dimensions become 0.
void znorm_group(std::vector<FeatureRecord>& group);
std::vector<std::vector<FeatureRecord>> znorm_per_client(std::vector<std::vector<FeatureRecord>> groups);

struct PartitionOptions {
  std::size_t shards_per_speaker = 4;
  std::size_t classes_per_shard = 3;
};

struct ClientShard {
  std::string speaker_id;
  std::size_t shard_index = 0;
  std::vector<int> classes;  // classes assigned to this shard
  std::vector<FeatureRecord> records;
};

// Splits every speaker into shards that each carry a fixed subset of that
// speaker's classes. Every labeled record lands in exactly one shard as long
// as the subsets cover the speaker's classes. Empty shards are dropped.
std::vector<ClientShard> partition_noniid(const std::vector<FeatureRecord>& records,
                                          const PartitionOptions& options, std::uint64_t seed);

class EvalKey {
  EvalKey() = default;
  friend class EvalAccess;
};

// Marks the current thread as running training code. While any scope is
// alive, SealedLabels::reveal throws.
class TrainingScope {
 public:
  TrainingScope();
  ~TrainingScope();
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;
  static bool active();
};

// Ground truth for samples whose labels were hidden. Only evaluation code
// can mint an EvalKey.
class SealedLabels {
 public:
  void seal(const std::string& utterance_id, int label) { labels_[utterance_id] = label; }
  bool contains(const std::string& utterance_id) const { return labels_.count(utterance_id) != 0; }
  std::size_t size() const { return labels_.size(); }
  int reveal(const std::string& utterance_id, const EvalKey& key) const;

 private:
  std::map<std::string, int> labels_;
};

struct LabelMask {
  std::vector<FeatureRecord> labeled;
  std::vector<FeatureRecord> unlabeled;  // label fields cleared
  SealedLabels sealed;
};

// Stratified: per class, round(rate * count) samples stay labeled, at least one.
LabelMask mask_labels(const std::vector<FeatureRecord>& pool, double label_rate, std::uint64_t seed);

struct SynthSpec {
  std::size_t speakers = 8;
  std::size_t per_speaker = 100;
  std::size_t classes = 4;
  std::size_t dim = 32;
  double class_sep = 3.0;
  double speaker_shift = 1.0;
  double noise = 1.0;
  std::vector<double> proportions;  // per-class weights; empty = balanced

  void validate() const;
};

std::vector<FeatureRecord> synth_generate(const SynthSpec& spec, std::uint64_t seed);

struct ClientData {
  int client_id = 0;
  std::string speaker_id;
  std::vector<FeatureRecord> train;
  std::vector<FeatureRecord> validation;
};

struct PartitionedDataset {
  std::vector<ClientData> clients;
  std::vector<FeatureRecord> test_records;
  std::size_t class_count = 0;
  std::size_t feature_dim = 0;
};

struct FoldOptions {
  std::size_t n_folds = 5;
  double validation_fraction = 0.2;
  std::size_t class_count = 0;  // 0 = infer from labels
  PartitionOptions partition;
};

std::vector<PartitionedDataset> make_folds(const std::vector<FeatureRecord>& records,
                                           const FoldOptions& options, std::uint64_t seed);

// z-normalizes each client (train and validation together) and each test
// speaker separately.
PartitionedDataset znorm_dataset(PartitionedDataset data);

}  // namespace fedser
