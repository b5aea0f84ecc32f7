#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace adaptforce {

/// Exponential force-depth law of one contact zone:
///   force(x) = a * exp(-b * x) + c
/// Physical zones have a > 0 and b < 0, so force is increasing and convex in
/// depth. c is normally close to -a so that force(0) ~ 0.
struct ContactModel {
  double a = 0.0;  // N
  double b = 0.0;  // 1/m
  double c = 0.0;  // N

  friend bool operator==(const ContactModel&, const ContactModel&) = default;
};

struct DepthForceSample {
  double depth = 0.0;  // m
  double force = 0.0;  // N
};

/// Contact force at `depth` (m). Throws InputError on non-finite or negative depth.
double force_at(const ContactModel& model, double depth);

/// Analytic slope d(force)/d(depth) in N/m.
double stiffness_at(const ContactModel& model, double depth);

/// Checks the zone invariants on [0, x_max]: a > 0, b < 0, finite
/// parameters and |force(0)| <= offset_tol. Throws InputError naming the
/// violated condition.
void validate_contact_model(const ContactModel& model, double x_max, double offset_tol = 0.5);

struct FitSettings {
  double step_tol = 1e-10;
  int max_iterations = 200;
  double initial_damping = 1e-3;
};

struct FitReport {
  ContactModel model;
  double rms_residual = 0.0;  // N
  int iterations = 0;
  bool converged = false;
};

/// Levenberg-Marquardt fit of the exponential law to depth/force samples.
///
/// The solver works on (log a, log(-b - b_floor), force(0)) so that every
/// iterate satisfies a > 0, b < 0. b_floor is a tiny curvature floor scaled
/// to the depth span; it keeps the parameters finite when the data is
/// linear (the b -> 0 limit of the law).
///
/// Throws InputError for fewer than 4 samples, non-finite values or a zero
/// depth span. Non-convergence is reported through FitReport::converged.
FitReport fit_exponential(std::span<const DepthForceSample> samples, const FitSettings& settings = {});

struct ZoneDataSpec {
  double step = 0.001;        // m per pressing increment
  double max_force = 25.0;    // N, a repetition stops once it exceeds this
  double noise_sigma = 0.0;   // N, zero-mean Gaussian per reading
  int repetitions = 10;
  std::uint64_t seed = 0;
  std::size_t max_samples = 100000;
};

/// Synthetic pressing experiment: each repetition steps downward from depth 0
/// at a fixed increment, reading force with independent noise, until the
/// reading exceeds max_force (that reading is kept). Returns the per-depth
/// mean over repetitions, truncated to the shortest repetition.
std::vector<DepthForceSample> generate_zone_data(const ContactModel& model, const ZoneDataSpec& spec);

// File formats: zone CSV `depth_m,force_n`; model JSON {"a":..,"b":..,"c":..}.
void write_zone_csv(const std::filesystem::path& path, std::span<const DepthForceSample> samples);
std::vector<DepthForceSample> read_zone_csv(const std::filesystem::path& path);
void save_contact_model(const std::filesystem::path& path, const ContactModel& model);
ContactModel load_contact_model(const std::filesystem::path& path);

}  // namespace adaptforce
