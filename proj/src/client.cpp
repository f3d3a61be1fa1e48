#include "fedser/client.hpp"

#include "fedser/errors.hpp"

namespace fedser {

ClientPools::ClientPools(std::vector<LocalSample> samples, std::vector<PooledLabel> labeled,
                         std::vector<std::size_t> unlabeled)
    : samples_(std::move(samples)), labeled_(std::move(labeled)), unlabeled_(unlabeled.begin(), unlabeled.end()) {
  if (unlabeled_.size() != unlabeled.size()) throw ConsistencyError("duplicate sample in D^u");
  if (!consistent()) throw ConsistencyError("client pools overlap or do not cover all samples");
}

void ClientPools::admit(std::size_t sample_id, int label) {
  auto it = unlabeled_.find(sample_id);
  if (it == unlabeled_.end()) {
    throw ConsistencyError("sample " + std::to_string(sample_id) + " is not in D^u");
  }
  unlabeled_.erase(it);
  pseudo_.push_back({sample_id, label});
}

bool ClientPools::consistent() const {
  std::vector<int> seen(samples_.size(), 0);
  auto mark = [&](std::size_t id) {
    if (id >= seen.size()) return false;
    return ++seen[id] == 1;
  };
  for (const auto& l : labeled_) {
    if (!mark(l.sample_id)) return false;
  }
  for (const auto& p : pseudo_) {
    if (!mark(p.sample_id)) return false;
  }
  for (std::size_t id : unlabeled_) {
    if (!mark(id)) return false;
  }
  return total() == samples_.size();
}

}  // namespace fedser
