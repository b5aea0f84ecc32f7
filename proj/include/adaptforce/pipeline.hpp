#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "adaptforce/adaptation_mlp.hpp"
#include "adaptforce/contact_model.hpp"
#include "adaptforce/force_controller.hpp"
#include "adaptforce/policy_solver.hpp"
#include "adaptforce/sim_harness.hpp"
#include "adaptforce/zones.hpp"
#include "json.hpp"

namespace adaptforce {

/// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,       // unexpected internal error or a failed stage
  kExitInputError = 2,    // bad flags, unreadable/malformed files, missing models
  kExitNotConverged = 3,  // fit or value iteration did not converge
  kExitUnsettled = 4,     // simulation did not settle or hit the retract gate
};

struct FitStageConfig {
  double step = 4e-4;        // m
  double max_force = 26.0;   // N
  double noise_sigma = 0.1;  // N
  int repetitions = 10;
  FitSettings settings;
};

struct SuiteStageConfig {
  std::vector<double> references = {5.0, 10.0, 15.0, 20.0};
  int seeds = 3;
  double band_fraction = 0.05;
  unsigned workers = 1;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::filesystem::path out_dir = "artifacts";
  std::vector<Zone> zones = bundled_zones();
  FitStageConfig fit;
  GridSpec grid;
  CostParams cost;
  SolverOptions solver;
  std::vector<double> references = default_references();
  TrainConfig train;
  HybridConfig hybrid;
  StiffnessDetectorConfig detector;
  SimConfig sim;
  SuiteStageConfig suite;
};

nlohmann::ordered_json to_json(const PipelineConfig& config);
/// Missing keys keep their defaults; wrong types raise ParseError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

enum class Stage { kFit = 1, kSolve = 2, kTrain = 3, kEvaluate = 4 };
const char* stage_name(Stage stage);

/// Seed fan-out: splitmix64(splitmix64(global ^ (stage << 32)) ^ index).
/// Stage-level reruns with the same global seed reproduce pipeline runs.
std::uint64_t stage_seed(std::uint64_t global_seed, Stage stage, std::uint64_t index);

/// "5" or "start:stop:step".
std::vector<double> parse_reference_spec(const std::string& spec);

/// Layout of the reproduce artifact tree under `root`.
struct ArtifactLayout {
  std::filesystem::path root;
  std::filesystem::path zones_dir() const { return root / "zones"; }
  std::filesystem::path policies_dir(const std::string& zone) const { return root / "policies" / zone; }
  std::filesystem::path train_dir() const { return root / "train"; }
  std::filesystem::path evaluate_dir() const { return root / "evaluate"; }
  std::filesystem::path stage_marker(Stage stage) const;
};

// Individual stages. Each reads and writes files only, so any of them can be
// rerun on its own.
FitReport run_fit_stage(const PipelineConfig& config, const Zone& zone, std::size_t zone_index,
                        const ArtifactLayout& layout);
std::vector<PolicyTable> run_solve_stage(const PipelineConfig& config, const ContactModel& fitted,
                                         const std::filesystem::path& out_dir);
TrainResult run_train_stage(const PipelineConfig& config, const std::vector<std::filesystem::path>& policy_dirs,
                            const std::filesystem::path& out_dir);
std::vector<SuiteRow> run_evaluate_stage(const PipelineConfig& config, const AdaptationModel& model,
                                         const std::filesystem::path& out_dir);

void write_loss_history(const std::filesystem::path& path, const std::vector<double>& history);

struct ReproduceOptions {
  bool dry_run = false;
  bool resume = false;
};

/// fit -> solve -> train -> evaluate on the configured zones. Returns an
/// ExitCode; progress and failures go to `log`.
int run_reproduce(const PipelineConfig& config, const ReproduceOptions& options, std::ostream& log);

}  // namespace adaptforce
