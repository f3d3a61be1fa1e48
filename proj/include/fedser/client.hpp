#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <vector>

namespace fedser {

// One training utterance held on a client. Carries no label; labels live in
// the pools that reference the sample.
struct LocalSample {
  std::string utterance_id;
  std::vector<double> features;
};

struct PooledLabel {
  std::size_t sample_id = 0;
  int label = 0;
};

// The three disjoint sample pools of a client: labeled D^l, pseudo-labeled
// D^p and unlabeled D^u. Sample ids index samples().
class ClientPools {
 public:
  ClientPools() = default;
  ClientPools(std::vector<LocalSample> samples, std::vector<PooledLabel> labeled,
              std::vector<std::size_t> unlabeled);

  const std::vector<LocalSample>& samples() const { return samples_; }
  const LocalSample& sample(std::size_t id) const { return samples_.at(id); }

  const std::vector<PooledLabel>& labeled() const { return labeled_; }
  const std::vector<PooledLabel>& pseudo() const { return pseudo_; }
  const std::set<std::size_t>& unlabeled() const { return unlabeled_; }

  bool is_unlabeled(std::size_t id) const { return unlabeled_.count(id) != 0; }

  // Moves a sample from D^u to D^p with a permanent hard label.
  void admit(std::size_t sample_id, int label);

  std::size_t total() const { return labeled_.size() + pseudo_.size() + unlabeled_.size(); }

  // Pairwise disjointness and full coverage of samples().
  bool consistent() const;

 private:
  std::vector<LocalSample> samples_;
  std::vector<PooledLabel> labeled_;
  std::vector<PooledLabel> pseudo_;
  std::set<std::size_t> unlabeled_;
};

}  // namespace fedser
