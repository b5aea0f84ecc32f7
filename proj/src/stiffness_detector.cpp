#include "adaptforce/stiffness_detector.hpp"

#include <algorithm>
#include <cmath>

#include "adaptforce/error.hpp"

namespace adaptforce {

StiffnessDetector::StiffnessDetector(StiffnessDetectorConfig config) : config_(config) {
  if (!(config_.min_displacement > 0.0) || !std::isfinite(config_.min_displacement)) {
    throw InputError("min_displacement must be > 0");
  }
  if (!(config_.smoothing > 0.0 && config_.smoothing <= 1.0)) {
    throw InputError("smoothing must be in (0, 1]");
  }
  if (config_.floor && !std::isfinite(*config_.floor)) {
    throw InputError("stiffness floor must be finite");
  }
}

std::optional<double> StiffnessDetector::update(double current_force, double displacement_last_period) {
  if (!std::isfinite(current_force) || !std::isfinite(displacement_last_period)) {
    throw InputError("stiffness detector inputs must be finite");
  }
  if (last_force_ && std::abs(displacement_last_period) >= config_.min_displacement) {
    const double secant = (current_force - *last_force_) / displacement_last_period;
    if (std::isfinite(secant)) {
      filtered_ = filtered_ ? config_.smoothing * secant + (1.0 - config_.smoothing) * *filtered_ : secant;
    }
  }
  last_force_ = current_force;
  last_displacement_ = displacement_last_period;
  return stiffness();
}

std::optional<double> StiffnessDetector::stiffness() const {
  if (!filtered_) return std::nullopt;
  return config_.floor ? std::max(*filtered_, *config_.floor) : *filtered_;
}

void StiffnessDetector::reset() {
  last_force_.reset();
  last_displacement_.reset();
  filtered_.reset();
}

}  // namespace adaptforce
