#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fedser/client.hpp"
#include "fedser/data.hpp"
#include "fedser/nn.hpp"

namespace fedser {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

// Rows are true classes, columns predicted classes.
ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels, std::size_t class_count);

// Recall per class; empty for classes that never occur in labels.
std::vector<std::optional<double>> per_class_recall(std::span<const int> predictions, std::span<const int> labels,
                                                    std::size_t class_count);

// Unweighted average recall over the classes present in labels.
double uar(std::span<const int> predictions, std::span<const int> labels, std::size_t class_count);

struct Evaluation {
  double uar = 0.0;
  std::vector<std::optional<double>> recall;
  std::vector<int> predictions;
};

// Eval-mode predictions on labeled records.
Evaluation evaluate(const ModelParams& model, const std::vector<FeatureRecord>& records, std::size_t class_count);

struct PseudoLabelAudit {
  const ClientPools* pools = nullptr;
  const SealedLabels* sealed = nullptr;
};

// Fraction of D^p entries whose hard label matches the sealed truth, over all
// given clients. Empty when no client holds pseudo labels.
std::optional<double> pseudo_label_accuracy(std::span<const PseudoLabelAudit> clients);

}  // namespace fedser
