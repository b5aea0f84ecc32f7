#include "adaptforce/force_controller.hpp"

#include <algorithm>
#include <cmath>

#include "adaptforce/error.hpp"

namespace adaptforce {

double pid_step(PidState& state, const PidGains& gains, double error, double dt, double max_step) {
  if (!std::isfinite(error)) throw InputError("pid error must be finite");
  if (!(dt > 0.0)) throw InputError("pid dt must be > 0");
  state.integral += error * dt;
  const double derivative = state.previous_error ? (error - *state.previous_error) / dt : 0.0;
  state.previous_error = error;
  const double u = (gains.kp * error + gains.ki * state.integral + gains.kd * derivative) * dt;
  return std::clamp(u, -max_step, max_step);
}

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::kApproach:
      return "approach";
    case Mode::kRegulate:
      return "regulate";
    case Mode::kRetract:
      return "retract";
  }
  return "unknown";
}

void HybridConfig::validate() const {
  if (!(f_min > 0.0 && f_min < f_max)) throw InputError("hybrid gates require 0 < f_min < f_max");
  if (!(approach_speed > 0.0) || !(retract_speed > 0.0)) throw InputError("speeds must be > 0");
  if (!(control_period > 0.0)) throw InputError("control_period must be > 0");
  if (!(max_step > 0.0)) throw InputError("max_step must be > 0");
  if (!std::isfinite(ki) || !std::isfinite(kd)) throw InputError("ki and kd must be finite");
}

PidGains adaptive_gain(const GainSource& source, const HybridConfig& config, double reference, double force,
                       double stiffness) {
  PidGains gains{0.0, config.ki, config.kd};
  if (const auto* model = std::get_if<AdaptationModel>(&source)) {
    gains.kp = forward(*model, Features(reference, force, stiffness));
  } else if (const auto* fixed = std::get_if<ConstantKp>(&source)) {
    gains.kp = fixed->kp;
  } else {
    throw ConfigError("no adaptation module loaded");
  }
  return gains;
}

HybridOutput hybrid_step(Mode mode, PidState& pid, const HybridConfig& config, const GainSource& gains,
                         double reference, double force, double stiffness) {
  if (!std::isfinite(force)) throw InputError("force must be finite");

  Mode next = mode;
  switch (mode) {
    case Mode::kApproach:
      if (force >= config.f_min) next = Mode::kRegulate;
      break;
    case Mode::kRegulate:
      if (force > config.f_max) next = Mode::kRetract;
      break;
    case Mode::kRetract:
      if (force < config.f_min) next = Mode::kApproach;
      break;
  }

  HybridOutput out;
  out.mode = next;
  out.transitioned = next != mode;
  out.safety_event = out.transitioned && next == Mode::kRetract;
  if (out.transitioned) pid.reset();

  switch (next) {
    case Mode::kApproach:
      out.displacement = config.approach_speed;
      break;
    case Mode::kRetract:
      out.displacement = -config.retract_speed;
      break;
    case Mode::kRegulate: {
      const PidGains g = adaptive_gain(gains, config, reference, force, stiffness);
      out.kp = g.kp;
      out.displacement = pid_step(pid, g, reference - force, config.control_period, config.max_step);
      break;
    }
  }
  return out;
}

HybridController::HybridController(ControllerConfig config)
    : config_(std::move(config)), detector_(config_.detector) {
  config_.hybrid.validate();
}

HybridController::Step HybridController::step(double reference, double measured_force) {
  const auto s = detector_.update(measured_force, last_command_);
  Step result;
  result.stiffness = s.value_or(config_.detector.floor.value_or(0.0));
  result.output = hybrid_step(mode_, pid_, config_.hybrid, config_.gains, reference, measured_force, result.stiffness);
  mode_ = result.output.mode;
  last_command_ = result.output.displacement;
  return result;
}

void HybridController::reset() {
  detector_.reset();
  mode_ = Mode::kApproach;
  pid_.reset();
  last_command_ = 0.0;
}

}  // namespace adaptforce
