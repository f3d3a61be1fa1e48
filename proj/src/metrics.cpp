#include "fedser/metrics.hpp"

#include <string>

#include "fedser/errors.hpp"

namespace fedser {

class EvalAccess {
 public:
  static EvalKey key() { return EvalKey{}; }
};

namespace {

void check_inputs(std::span<const int> predictions, std::span<const int> labels, std::size_t class_count) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw Error("predictions and labels must be non-empty and equally long");
  }
  const auto c = static_cast<int>(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= c || predictions[i] < 0 || predictions[i] >= c) {
      throw LabelError("class index outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

}  // namespace

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels, std::size_t class_count) {
  check_inputs(predictions, labels, class_count);
  ConfusionMatrix m(class_count, std::vector<std::size_t>(class_count, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++m[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
  }
  return m;
}

std::vector<std::optional<double>> per_class_recall(std::span<const int> predictions, std::span<const int> labels,
                                                    std::size_t class_count) {
  const auto m = confusion(predictions, labels, class_count);
  std::vector<std::optional<double>> recall(class_count);
  for (std::size_t c = 0; c < class_count; ++c) {
    std::size_t row = 0;
    for (std::size_t v : m[c]) row += v;
    if (row > 0) recall[c] = static_cast<double>(m[c][c]) / static_cast<double>(row);
  }
  return recall;
}

double uar(std::span<const int> predictions, std::span<const int> labels, std::size_t class_count) {
  const auto recall = per_class_recall(predictions, labels, class_count);
  double total = 0.0;
  std::size_t present = 0;
  for (const auto& r : recall) {
    if (!r) continue;
    total += *r;
    ++present;
  }
  return total / static_cast<double>(present);
}

Evaluation evaluate(const ModelParams& model, const std::vector<FeatureRecord>& records, std::size_t class_count) {
  if (records.empty()) throw Error("evaluation on an empty record set");
  Matrix batch(records.size(), model.input_dim());
  std::vector<int> labels;
  labels.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) throw LabelError("evaluation record " + records[i].utterance_id + " has no label");
    if (records[i].features.size() != model.input_dim()) throw ShapeError("evaluation record width mismatch");
    std::copy(records[i].features.begin(), records[i].features.end(), batch.row(i).begin());
    labels.push_back(*records[i].label);
  }
  const Matrix logits = predict_logits(model, batch);
  Evaluation out;
  out.predictions.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out.predictions.push_back(static_cast<int>(argmax(logits.row(i))));
  out.recall = per_class_recall(out.predictions, labels, class_count);
  out.uar = uar(out.predictions, labels, class_count);
  return out;
}

std::optional<double> pseudo_label_accuracy(std::span<const PseudoLabelAudit> clients) {
  const EvalKey key = EvalAccess::key();
  std::size_t total = 0;
  std::size_t correct = 0;
  for (const auto& client : clients) {
    for (const auto& p : client.pools->pseudo()) {
      const auto& utt = client.pools->sample(p.sample_id).utterance_id;
      ++total;
      if (client.sealed->reveal(utt, key) == p.label) ++correct;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace fedser
