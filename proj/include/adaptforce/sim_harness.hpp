#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptforce/contact_model.hpp"
#include "adaptforce/force_controller.hpp"
#include "adaptforce/zones.hpp"

namespace adaptforce {

/// 1-D plant: the tool moves along the pressing axis (downward positive);
/// force follows the zone law once the tool is below the surface.
struct PlantState {
  double tool_position = 0.0;     // m
  double surface_position = 0.0;  // m
  double depth() const { return std::max(0.0, tool_position - surface_position); }
};

struct SimConfig {
  ContactModel zone;
  double reference = 10.0;            // N
  double control_period = 0.01;       // s
  double sensor_noise_sigma = 0.05;   // N
  double episode_duration = 5.0;      // s
  double start_height = 0.005;        // m above the surface
  double drift_amplitude = 0.0;       // m, surface motion; 0 disables
  double drift_period = 4.0;          // s
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrajectoryRecord {
  double t = 0.0;
  double depth = 0.0;
  double measured_force = 0.0;
  double true_force = 0.0;
  double kp = 0.0;
  Mode mode = Mode::kApproach;
  double command = 0.0;
  bool safety_event = false;
};

struct Trajectory {
  SimConfig config;
  std::string model_hash;
  std::vector<TrajectoryRecord> records;
};

/// Fixed-step closed loop. Each tick: read force (zone law plus seeded
/// Gaussian noise, floored at 0), let the controller produce a displacement,
/// move the tool. Throws SimulationFault with the step index on non-finite state.
Trajectory run_episode(const SimConfig& config, HybridController& controller);

struct EpisodeMetrics {
  std::optional<double> convergence_time;  // s from Regulate entry
  double overshoot = 0.0;                  // N
  double steady_state_error = 0.0;         // N, mean |error| over the last 20 %
  bool settled = false;
  bool retracted = false;
  bool contacted = false;
};

/// Convergence time is measured from the first Regulate record to the start
/// of the final run of records within band_fraction * |reference|.
EpisodeMetrics compute_metrics(const Trajectory& traj, double reference, double band_fraction = 0.05);

struct SuiteRow {
  std::string zone;
  double reference = 0.0;
  std::uint64_t seed = 0;
  EpisodeMetrics metrics;
  std::optional<std::string> fault;
};

struct SuiteSpec {
  std::vector<Zone> zones;
  std::vector<double> references;
  std::vector<std::uint64_t> seeds;
  SimConfig sim;  // zone, reference and seed are overwritten per episode
  double band_fraction = 0.05;
  unsigned workers = 1;
};

/// Zones x references x seeds, in that nesting order. Faulted episodes are
/// reported in their row rather than aborting the suite.
std::vector<SuiteRow> evaluate_suite(const SuiteSpec& spec, const ControllerConfig& controller);

/// FNV-1a over the zone parameters and the gain source.
std::string model_hash(const ContactModel& zone, const GainSource& gains);

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);
std::vector<TrajectoryRecord> read_trajectory_csv(const std::filesystem::path& path);
void write_metrics_csv(const std::filesystem::path& path, std::span<const SuiteRow> rows);

}  // namespace adaptforce
