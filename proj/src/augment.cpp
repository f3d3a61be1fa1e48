#include "fedser/augment.hpp"

#include <cmath>

#include "fedser/errors.hpp"

namespace fedser {

namespace {

void validate(const SfaParams& p) {
  if (!(p.sigma1 >= 0.0 && std::isfinite(p.sigma1) && p.sigma2 >= 0.0 && std::isfinite(p.sigma2))) {
    throw ConfigError("SFA sigmas must be finite and non-negative");
  }
}

}  // namespace

std::vector<double> sfa(std::span<const double> x, const SfaParams& params, Rng& rng) {
  validate(params);
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) {
    if (!std::isfinite(v)) throw NumericError("non-finite feature passed to SFA");
    // Both draws are taken unconditionally so the stream position does not
    // depend on the sigmas; a zero sigma leaves the value bit-exact.
    const double alpha = rng.normal(0.0, 1.0);
    const double r = rng.normal(0.0, 1.0);
    if (params.sigma1 > 0.0) v *= 1.0 + params.sigma1 * alpha;
    if (params.sigma2 > 0.0) v += params.sigma2 * r;
  }
  return out;
}

std::vector<double> weak_view(std::span<const double> x, const AugmentConfig& cfg, Rng& rng) {
  return sfa(x, cfg.weak, rng);
}

std::vector<double> strong_view(std::span<const double> x, const AugmentConfig& cfg, Rng& rng) {
  return sfa(x, cfg.strong, rng);
}

}  // namespace fedser
