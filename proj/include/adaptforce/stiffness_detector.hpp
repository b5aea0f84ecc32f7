#pragma once

#include <optional>

namespace adaptforce {

struct StiffnessDetectorConfig {
  double min_displacement = 1e-7;  // m; smaller displacements hold the last value
  double smoothing = 1.0;          // exponential smoothing factor in (0, 1]; 1 = off
  std::optional<double> floor = 0.0;  // N/m; emitted values are clamped up to this
};

/// Secant stiffness from consecutive force readings:
///   s = (f_current - f_last) / dx_last
/// One instance per control loop; not thread safe.
class StiffnessDetector {
 public:
  explicit StiffnessDetector(StiffnessDetectorConfig config = {});

  /// Feeds one control period. Returns the current stiffness estimate, or
  /// nullopt until a first valid secant has been observed.
  std::optional<double> update(double current_force, double displacement_last_period);

  std::optional<double> stiffness() const;
  std::optional<double> last_force() const { return last_force_; }
  const StiffnessDetectorConfig& config() const { return config_; }
  void reset();

 private:
  StiffnessDetectorConfig config_;
  std::optional<double> last_force_;
  std::optional<double> last_displacement_;
  std::optional<double> filtered_;
};

}  // namespace adaptforce
