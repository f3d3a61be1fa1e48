#pragma once

// Multiview pseudo-labeling: m weak views per unlabeled sample, temperature
// softened predictions, confidence and uncertainty gates, and a per-class
// admission budget.

#include <cstddef>
#include <span>
#include <vector>

#include "fedser/augment.hpp"
#include "fedser/client.hpp"
#include "fedser/nn.hpp"
#include "fedser/rng.hpp"

namespace fedser {

struct PlConfig {
  std::size_t views = 10;  // m
  double temperature = 2.0;
  double tau_start = 0.5;
  double tau_end = 0.9;
  int tau_ramp_epochs = 300;
  double kappa = 0.005;  // uncertainty ceiling
  std::size_t per_class_budget = 1;

  void validate() const;
};

struct PseudoProposal {
  std::size_t sample_id = 0;
  std::vector<double> q_bar;
  double uncertainty = 0.0;
  int y_prime = 0;

  double confidence() const { return q_bar[static_cast<std::size_t>(y_prime)]; }
};

struct Admission {
  std::size_t sample_id = 0;
  int label = 0;
  double confidence = 0.0;
  double uncertainty = 0.0;
};

struct PseudoLabelReport {
  double tau = 0.0;
  std::size_t eligible = 0;
  std::vector<std::size_t> per_class;  // admissions per class
  std::vector<Admission> admitted;
};

// Temperature-scaled softmax.
std::vector<double> soften(std::span<const double> logits, double temperature);

// Linear ramp tau_start -> tau_end over tau_ramp_epochs, flat afterwards.
double tau_schedule(int epoch, const PlConfig& cfg);

// Scores m weak views of x_u with the model in eval mode. The uncertainty is
// the population std-dev across views of the probability given to y_prime.
PseudoProposal mvpl_propose(const ModelParams& model, std::size_t sample_id, std::span<const double> x_u,
                            const PlConfig& cfg, const AugmentConfig& augment, Rng& rng);

// One proposal per sample of D^u, in ascending sample id order.
std::vector<PseudoProposal> propose_all(const ModelParams& model, const ClientPools& pools, const PlConfig& cfg,
                                        const AugmentConfig& augment, Rng& rng);

// Gates proposals on confidence >= tau and uncertainty <= kappa, then admits
// at most per_class_budget per class (highest confidence, lowest id on ties).
// Validates every proposal before touching the pools.
PseudoLabelReport select_and_move(ClientPools& pools, std::span<const PseudoProposal> proposals, double tau,
                                  const PlConfig& cfg, std::size_t class_count);

}  // namespace fedser
