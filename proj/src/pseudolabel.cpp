#include "fedser/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fedser/errors.hpp"

namespace fedser {

void PlConfig::validate() const {
  if (views < 1) throw ConfigError("pl.m must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("pl.temperature must be positive");
  if (!(tau_start > 0.0 && tau_start <= tau_end && tau_end <= 1.0)) {
    throw ConfigError("pl.tau_start/pl.tau_end must satisfy 0 < start <= end <= 1");
  }
  if (tau_ramp_epochs < 0) throw ConfigError("pl.tau_ramp_epochs must be >= 0");
  if (!(kappa > 0.0)) throw ConfigError("pl.kappa must be positive");
  if (per_class_budget < 1) throw ConfigError("pl.per_class_budget must be >= 1");
}

std::vector<double> soften(std::span<const double> logits, double temperature) {
  return softmax(logits, temperature);
}

double tau_schedule(int epoch, const PlConfig& cfg) {
  if (cfg.tau_ramp_epochs <= 0 || epoch >= cfg.tau_ramp_epochs) return cfg.tau_end;
  const double frac = static_cast<double>(std::max(epoch, 0)) / cfg.tau_ramp_epochs;
  return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac;
}

PseudoProposal mvpl_propose(const ModelParams& model, std::size_t sample_id, std::span<const double> x_u,
                            const PlConfig& cfg, const AugmentConfig& augment, Rng& rng) {
  if (x_u.size() != model.input_dim()) throw ShapeError("unlabeled sample width does not match model input");
  const std::size_t m = cfg.views;
  Matrix views(m, x_u.size());
  for (std::size_t i = 0; i < m; ++i) {
    const auto v = weak_view(x_u, augment, rng);
    std::copy(v.begin(), v.end(), views.row(i).begin());
  }
  const Matrix logits = predict_logits(model, views);

  const std::size_t classes = model.output_dim();
  std::vector<std::vector<double>> q;
  q.reserve(m);
  PseudoProposal proposal;
  proposal.sample_id = sample_id;
  proposal.q_bar.assign(classes, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    q.push_back(soften(logits.row(i), cfg.temperature));
    for (std::size_t j = 0; j < classes; ++j) proposal.q_bar[j] += q.back()[j];
  }
  for (double& v : proposal.q_bar) v /= static_cast<double>(m);
  proposal.y_prime = static_cast<int>(argmax(proposal.q_bar));

  const auto y = static_cast<std::size_t>(proposal.y_prime);
  double mean = 0.0;
  for (const auto& qi : q) mean += qi[y];
  mean /= static_cast<double>(m);
  double var = 0.0;
  for (const auto& qi : q) var += (qi[y] - mean) * (qi[y] - mean);
  proposal.uncertainty = std::sqrt(var / static_cast<double>(m));
  if (!std::isfinite(proposal.uncertainty)) throw NumericError("non-finite pseudo-label uncertainty");
  return proposal;
}

std::vector<PseudoProposal> propose_all(const ModelParams& model, const ClientPools& pools, const PlConfig& cfg,
                                        const AugmentConfig& augment, Rng& rng) {
  std::vector<PseudoProposal> out;
  out.reserve(pools.unlabeled().size());
  for (std::size_t id : pools.unlabeled()) {
    out.push_back(mvpl_propose(model, id, pools.sample(id).features, cfg, augment, rng));
  }
  return out;
}

PseudoLabelReport select_and_move(ClientPools& pools, std::span<const PseudoProposal> proposals, double tau,
                                  const PlConfig& cfg, std::size_t class_count) {
  std::set<std::size_t> seen;
  for (const auto& p : proposals) {
    if (!pools.is_unlabeled(p.sample_id)) {
      throw ConsistencyError("proposal for sample " + std::to_string(p.sample_id) + " which is not in D^u");
    }
    if (!seen.insert(p.sample_id).second) {
      throw ConsistencyError("duplicate proposal for sample " + std::to_string(p.sample_id));
    }
    if (p.y_prime < 0 || static_cast<std::size_t>(p.y_prime) >= class_count || p.q_bar.size() != class_count) {
      throw ConsistencyError("proposal class outside [0, C)");
    }
  }

  PseudoLabelReport report;
  report.tau = tau;
  report.per_class.assign(class_count, 0);

  std::vector<std::vector<const PseudoProposal*>> by_class(class_count);
  for (const auto& p : proposals) {
    if (p.confidence() >= tau && p.uncertainty <= cfg.kappa) {
      by_class[static_cast<std::size_t>(p.y_prime)].push_back(&p);
      ++report.eligible;
    }
  }
  for (std::size_t c = 0; c < class_count; ++c) {
    auto& cands = by_class[c];
    std::sort(cands.begin(), cands.end(), [](const PseudoProposal* a, const PseudoProposal* b) {
      if (a->confidence() != b->confidence()) return a->confidence() > b->confidence();
      return a->sample_id < b->sample_id;
    });
    const std::size_t take = std::min(cands.size(), cfg.per_class_budget);
    for (std::size_t i = 0; i < take; ++i) {
      const auto* p = cands[i];
      report.admitted.push_back({p->sample_id, p->y_prime, p->confidence(), p->uncertainty});
    }
    report.per_class[c] = take;
  }
  for (const auto& a : report.admitted) pools.admit(a.sample_id, a.label);
  return report;
}

}  // namespace fedser
