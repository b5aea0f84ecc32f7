#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "adaptforce/contact_model.hpp"

namespace adaptforce {

/// Force as a function of depth. Any contact law can drive the solver, the
/// exponential ContactModel being the usual one.
using ForceLaw = std::function<double(double)>;

ForceLaw as_force_law(const ContactModel& model);

/// Uniform state (depth) and input (Kp) grids plus the backup time step.
struct GridSpec {
  double x_min = 0.0;
  double x_max = 0.02;
  int x_steps = 1001;
  double u_min = 0.0;
  double u_max = 1.0;
  int u_steps = 1000;
  double dt = 0.03;

  double x_at(int i) const { return x_min + (x_max - x_min) * i / (x_steps - 1); }
  double u_at(int j) const { return u_min + (u_max - u_min) * j / (u_steps - 1); }
  void validate() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Quadratic running cost weights: a * (f_r - f(x))^2 + b * Kp^2.
struct CostParams {
  double a = 1.0;
  double b = 40.0;
  void validate() const;

  friend bool operator==(const CostParams&, const CostParams&) = default;
};

enum class StopRule {
  /// max(dV) - min(dV) < tol. The right test for undiscounted problems
  /// whose grid never lands exactly on the equilibrium: V then grows by a
  /// constant per sweep while the policy is already fixed.
  kSpan,
  /// max |dV| < tol.
  kMaxDelta,
};

struct SolverOptions {
  double discount = 1.0;
  double tolerance = 1e-6;
  int max_sweeps = 10000;
  StopRule stop_rule = StopRule::kSpan;
  unsigned workers = 1;
};

struct PolicyTable {
  double reference = 0.0;  // N
  std::vector<double> x_grid;
  std::vector<double> kp_values;
  std::vector<double> value_function;
  int sweeps = 0;
  bool converged = false;
  /// V never decreased at any node between consecutive sweeps.
  bool monotone = true;
  /// Last sweep's min and max of V_new - V_old.
  double last_delta_min = 0.0;
  double last_delta_max = 0.0;
  GridSpec grid;
  CostParams cost;
};

/// x + dt * kp * (reference - force(x)), clamped to [grid.x_min, grid.x_max].
double step_dynamics(const ForceLaw& force, double x, double kp, double reference, double dt, const GridSpec& grid);
double step_dynamics(const ContactModel& model, double x, double kp, double reference, double dt,
                     const GridSpec& grid);

/// dt * (a * (reference - force(x))^2 + b * kp^2)
double stage_cost(const CostParams& params, const ForceLaw& force, double x, double kp, double reference, double dt);
double stage_cost(const CostParams& params, const ContactModel& model, double x, double kp, double reference,
                  double dt);

/// Fitted value iteration on the depth grid. V starts at zero; every sweep
/// applies V(x_i) <- min_j [stage_cost + discount * interp(V, next_x)] using
/// linear interpolation between the two bracketing nodes. Ties go to the
/// smaller Kp. Sweeps read only the previous V, so the state grid is split
/// across `options.workers` threads without changing the result.
PolicyTable solve_policy(const ForceLaw& force, double reference, const GridSpec& grid, const CostParams& cost,
                         const SolverOptions& options = {});
PolicyTable solve_policy(const ContactModel& model, double reference, const GridSpec& grid, const CostParams& cost,
                         const SolverOptions& options = {});

std::vector<PolicyTable> solve_policy_sweep(const ContactModel& model, std::span<const double> references,
                                            const GridSpec& grid, const CostParams& cost,
                                            const SolverOptions& options = {});

/// {4, 4.5, ..., 24}
std::vector<double> default_references();

/// Inclusive arithmetic range; rounding-safe count.
std::vector<double> reference_range(double start, double stop, double step);

/// Kp at arbitrary depth, piecewise linear between nodes and held at the ends.
double policy_kp_at(const PolicyTable& table, double x);

// Files: `<stem>.csv` with `x_m,kp,value` and a `<stem>.json` sidecar.
std::string policy_file_stem(double reference);
void write_policy(const std::filesystem::path& dir, const PolicyTable& table);
PolicyTable read_policy(const std::filesystem::path& csv_path);
/// All policies in a directory, ordered by reference.
std::vector<PolicyTable> read_policy_dir(const std::filesystem::path& dir);

}  // namespace adaptforce
