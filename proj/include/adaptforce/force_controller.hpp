#pragma once

#include <optional>
#include <variant>

#include "adaptforce/adaptation_mlp.hpp"
#include "adaptforce/stiffness_detector.hpp"

namespace adaptforce {

/// kp is a velocity gain (m / (s N)), the same units the policy solver uses.
struct PidGains {
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
};

struct PidState {
  double integral = 0.0;  // N s
  std::optional<double> previous_error;

  void reset() {
    integral = 0.0;
    previous_error.reset();
  }
};

/// Position-form PID producing a displacement for one control period:
///   u = (kp e + ki integral + kd de/dt) * dt, saturated at +-max_step.
/// Rectangular integration; derivative is 0 on the first call.
double pid_step(PidState& state, const PidGains& gains, double error, double dt, double max_step);

enum class Mode {
  kApproach = 1,  // free-space descent until the contact gate
  kRegulate = 2,  // adaptive force regulation
  kRetract = 3,   // safety retraction above the force gate
};

const char* mode_name(Mode mode);

struct HybridConfig {
  double f_min = 0.5;             // N, contact gate
  double f_max = 30.0;            // N, safety gate
  double approach_speed = 2e-4;   // m per control period, downward
  double retract_speed = 5e-4;    // m per control period, upward
  double control_period = 0.01;   // s
  double max_step = 2e-3;         // m per control period in Regulate
  double ki = 0.0;
  double kd = 0.0;

  void validate() const;
};

struct ConstantKp {
  double kp = 0.0;
};

/// Where Regulate mode gets Kp from. monostate means no module was loaded.
using GainSource = std::variant<std::monostate, AdaptationModel, ConstantKp>;

/// Kp from the gain source for (reference, force, stiffness); ki/kd from
/// configuration. Throws ConfigError when the source is empty.
PidGains adaptive_gain(const GainSource& source, const HybridConfig& config, double reference, double force,
                       double stiffness);

struct HybridOutput {
  Mode mode = Mode::kApproach;  // mode after the transition check; produced `displacement`
  double displacement = 0.0;    // m, downward positive
  double kp = 0.0;              // gain used (0 outside Regulate)
  bool transitioned = false;
  bool safety_event = false;    // entered Retract on this step
};

/// One tick of the three-mode machine. Transitions are checked first
/// (Approach->Regulate at force >= f_min, Regulate->Retract at force > f_max,
/// Retract->Approach at force < f_min); any transition zeroes `pid`. The
/// command of the resulting mode is then issued.
HybridOutput hybrid_step(Mode mode, PidState& pid, const HybridConfig& config, const GainSource& gains,
                         double reference, double force, double stiffness);

struct ControllerConfig {
  HybridConfig hybrid;
  StiffnessDetectorConfig detector;
  GainSource gains;
};

/// Stateful controller for one loop: stiffness detector fed with the
/// previous command, hybrid state machine and PID memory.
class HybridController {
 public:
  explicit HybridController(ControllerConfig config);

  struct Step {
    HybridOutput output;
    double stiffness = 0.0;  // feature value passed to the gain source
  };

  Step step(double reference, double measured_force);

  Mode mode() const { return mode_; }
  const PidState& pid() const { return pid_; }
  const ControllerConfig& config() const { return config_; }
  void reset();

 private:
  ControllerConfig config_;
  StiffnessDetector detector_;
  Mode mode_ = Mode::kApproach;
  PidState pid_;
  double last_command_ = 0.0;
};

}  // namespace adaptforce
