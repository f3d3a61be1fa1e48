#pragma once

// Stochastic feature augmentation: x * alpha + r with per-dimension
// alpha ~ N(1, sigma1^2) and r ~ N(0, sigma2^2).

#include <span>
#include <vector>

#include "fedser/rng.hpp"

namespace fedser {

struct SfaParams {
  double sigma1 = 0.0;  // std-dev of the multiplicative noise
  double sigma2 = 0.0;  // std-dev of the additive noise
};

struct AugmentConfig {
  SfaParams weak{0.1, 0.1};
  SfaParams strong{0.25, 0.1};
};

std::vector<double> sfa(std::span<const double> x, const SfaParams& params, Rng& rng);

std::vector<double> weak_view(std::span<const double> x, const AugmentConfig& cfg, Rng& rng);
std::vector<double> strong_view(std::span<const double> x, const AugmentConfig& cfg, Rng& rng);

}  // namespace fedser
