#include "adaptforce/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "adaptforce/csv.hpp"
#include "adaptforce/error.hpp"

namespace adaptforce {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& field, const std::string& ctx) {
  if (!obj.contains(key)) return;
  const auto& v = obj[key];
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ParseError("");
    } else if constexpr (std::is_arithmetic_v<T>) {
      if (!v.is_number()) throw ParseError("");
      if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ParseError("");
      }
    }
    field = v.get<T>();
  } catch (const std::exception&) {
    throw ParseError("config: field '" + ctx + "." + key + "' has the wrong type");
  }
}

const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key)) return empty;
  if (!j[key].is_object()) throw ParseError(std::string("config: '") + key + "' must be an object");
  return j[key];
}

std::vector<double> read_number_list(const nlohmann::json& v, const std::string& ctx) {
  if (v.is_object()) {
    double start = 0, stop = 0, step = 0;
    read_field(v, "start", start, ctx);
    read_field(v, "stop", stop, ctx);
    read_field(v, "step", step, ctx);
    return reference_range(start, stop, step);
  }
  if (!v.is_array() || v.empty()) throw ParseError("config: '" + ctx + "' must be a non-empty array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ParseError("config: '" + ctx + "' must contain numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

void require_file(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw ConfigError("missing input file " + p.string());
}

nlohmann::ordered_json fit_report_json(const FitReport& r) {
  return {{"a", r.model.a},
          {"b", r.model.b},
          {"c", r.model.c},
          {"rms_residual_n", r.rms_residual},
          {"iterations", r.iterations},
          {"converged", r.converged}};
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  auto zones = nlohmann::ordered_json::array();
  for (const auto& z : c.zones) {
    zones.push_back({{"name", z.name}, {"a", z.model.a}, {"b", z.model.b}, {"c", z.model.c}, {"held_out", z.held_out}});
  }
  j["zones"] = zones;
  j["fit"] = {{"step", c.fit.step},
              {"max_force", c.fit.max_force},
              {"noise_sigma", c.fit.noise_sigma},
              {"repetitions", c.fit.repetitions},
              {"step_tol", c.fit.settings.step_tol},
              {"max_iterations", c.fit.settings.max_iterations}};
  j["grid"] = {{"x_min", c.grid.x_min}, {"x_max", c.grid.x_max}, {"x_steps", c.grid.x_steps},
               {"u_min", c.grid.u_min}, {"u_max", c.grid.u_max}, {"u_steps", c.grid.u_steps},
               {"dt", c.grid.dt}};
  j["cost"] = {{"a", c.cost.a}, {"b", c.cost.b}};
  j["solver"] = {{"discount", c.solver.discount},
                 {"tolerance", c.solver.tolerance},
                 {"max_sweeps", c.solver.max_sweeps},
                 {"stop_rule", c.solver.stop_rule == StopRule::kSpan ? "span" : "max_delta"},
                 {"workers", c.solver.workers}};
  j["references"] = c.references;
  j["train"] = {{"epochs", c.train.epochs},
                {"learning_rate", c.train.learning_rate},
                {"batch_size", c.train.batch_size},
                {"mini_batches_per_batch", c.train.mini_batches_per_batch},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"epsilon", c.train.epsilon},
                {"validation_fraction", c.train.validation_fraction},
                {"output_bias_init", c.train.output_bias_init}};
  j["controller"] = {{"f_min", c.hybrid.f_min},
                     {"f_max", c.hybrid.f_max},
                     {"approach_speed", c.hybrid.approach_speed},
                     {"retract_speed", c.hybrid.retract_speed},
                     {"control_period", c.hybrid.control_period},
                     {"max_step", c.hybrid.max_step},
                     {"ki", c.hybrid.ki},
                     {"kd", c.hybrid.kd},
                     {"min_displacement", c.detector.min_displacement},
                     {"smoothing", c.detector.smoothing},
                     {"stiffness_floor", c.detector.floor ? nlohmann::ordered_json(*c.detector.floor) : nullptr}};
  j["sim"] = {{"sensor_noise_sigma", c.sim.sensor_noise_sigma},
              {"episode_duration", c.sim.episode_duration},
              {"start_height", c.sim.start_height},
              {"drift_amplitude", c.sim.drift_amplitude},
              {"drift_period", c.sim.drift_period}};
  j["suite"] = {{"references", c.suite.references},
                {"seeds", c.suite.seeds},
                {"band_fraction", c.suite.band_fraction},
                {"workers", c.suite.workers}};
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("config: top level must be an object");
  PipelineConfig c;
  read_field(j, "seed", c.seed, "");
  if (j.contains("out_dir")) {
    if (!j["out_dir"].is_string()) throw ParseError("config: 'out_dir' must be a string");
    c.out_dir = j["out_dir"].get<std::string>();
  }
  if (j.contains("zones")) {
    if (!j["zones"].is_array() || j["zones"].empty()) throw ParseError("config: 'zones' must be a non-empty array");
    c.zones.clear();
    for (const auto& z : j["zones"]) {
      Zone zone;
      if (!z.is_object() || !z.contains("name") || !z["name"].is_string()) {
        throw ParseError("config: every zone needs a string 'name'");
      }
      zone.name = z["name"].get<std::string>();
      read_field(z, "a", zone.model.a, "zones." + zone.name);
      read_field(z, "b", zone.model.b, "zones." + zone.name);
      read_field(z, "c", zone.model.c, "zones." + zone.name);
      read_field(z, "held_out", zone.held_out, "zones." + zone.name);
      c.zones.push_back(zone);
    }
  }
  const auto& fit = section(j, "fit");
  read_field(fit, "step", c.fit.step, "fit");
  read_field(fit, "max_force", c.fit.max_force, "fit");
  read_field(fit, "noise_sigma", c.fit.noise_sigma, "fit");
  read_field(fit, "repetitions", c.fit.repetitions, "fit");
  read_field(fit, "step_tol", c.fit.settings.step_tol, "fit");
  read_field(fit, "max_iterations", c.fit.settings.max_iterations, "fit");

  const auto& grid = section(j, "grid");
  read_field(grid, "x_min", c.grid.x_min, "grid");
  read_field(grid, "x_max", c.grid.x_max, "grid");
  read_field(grid, "x_steps", c.grid.x_steps, "grid");
  read_field(grid, "u_min", c.grid.u_min, "grid");
  read_field(grid, "u_max", c.grid.u_max, "grid");
  read_field(grid, "u_steps", c.grid.u_steps, "grid");
  read_field(grid, "dt", c.grid.dt, "grid");

  const auto& cost = section(j, "cost");
  read_field(cost, "a", c.cost.a, "cost");
  read_field(cost, "b", c.cost.b, "cost");

  const auto& solver = section(j, "solver");
  read_field(solver, "discount", c.solver.discount, "solver");
  read_field(solver, "tolerance", c.solver.tolerance, "solver");
  read_field(solver, "max_sweeps", c.solver.max_sweeps, "solver");
  read_field(solver, "workers", c.solver.workers, "solver");
  if (solver.contains("stop_rule")) {
    const auto rule = solver["stop_rule"].is_string() ? solver["stop_rule"].get<std::string>() : "";
    if (rule == "span") {
      c.solver.stop_rule = StopRule::kSpan;
    } else if (rule == "max_delta") {
      c.solver.stop_rule = StopRule::kMaxDelta;
    } else {
      throw ParseError("config: solver.stop_rule must be \"span\" or \"max_delta\"");
    }
  }
  if (j.contains("references")) c.references = read_number_list(j["references"], "references");

  const auto& train = section(j, "train");
  read_field(train, "epochs", c.train.epochs, "train");
  read_field(train, "learning_rate", c.train.learning_rate, "train");
  read_field(train, "batch_size", c.train.batch_size, "train");
  read_field(train, "mini_batches_per_batch", c.train.mini_batches_per_batch, "train");
  read_field(train, "beta1", c.train.beta1, "train");
  read_field(train, "beta2", c.train.beta2, "train");
  read_field(train, "epsilon", c.train.epsilon, "train");
  read_field(train, "validation_fraction", c.train.validation_fraction, "train");
  read_field(train, "output_bias_init", c.train.output_bias_init, "train");

  const auto& ctl = section(j, "controller");
  read_field(ctl, "f_min", c.hybrid.f_min, "controller");
  read_field(ctl, "f_max", c.hybrid.f_max, "controller");
  read_field(ctl, "approach_speed", c.hybrid.approach_speed, "controller");
  read_field(ctl, "retract_speed", c.hybrid.retract_speed, "controller");
  read_field(ctl, "control_period", c.hybrid.control_period, "controller");
  read_field(ctl, "max_step", c.hybrid.max_step, "controller");
  read_field(ctl, "ki", c.hybrid.ki, "controller");
  read_field(ctl, "kd", c.hybrid.kd, "controller");
  read_field(ctl, "min_displacement", c.detector.min_displacement, "controller");
  read_field(ctl, "smoothing", c.detector.smoothing, "controller");
  if (ctl.contains("stiffness_floor")) {
    if (ctl["stiffness_floor"].is_null()) {
      c.detector.floor.reset();
    } else {
      double floor = 0.0;
      read_field(ctl, "stiffness_floor", floor, "controller");
      c.detector.floor = floor;
    }
  }

  const auto& sim = section(j, "sim");
  read_field(sim, "sensor_noise_sigma", c.sim.sensor_noise_sigma, "sim");
  read_field(sim, "episode_duration", c.sim.episode_duration, "sim");
  read_field(sim, "start_height", c.sim.start_height, "sim");
  read_field(sim, "drift_amplitude", c.sim.drift_amplitude, "sim");
  read_field(sim, "drift_period", c.sim.drift_period, "sim");
  c.sim.control_period = c.hybrid.control_period;

  const auto& suite = section(j, "suite");
  if (suite.contains("references")) c.suite.references = read_number_list(suite["references"], "suite.references");
  read_field(suite, "seeds", c.suite.seeds, "suite");
  read_field(suite, "band_fraction", c.suite.band_fraction, "suite");
  read_field(suite, "workers", c.suite.workers, "suite");
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(csv::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::kFit:
      return "fit";
    case Stage::kSolve:
      return "solve";
    case Stage::kTrain:
      return "train";
    case Stage::kEvaluate:
      return "evaluate";
  }
  return "unknown";
}

std::uint64_t stage_seed(std::uint64_t global_seed, Stage stage, std::uint64_t index) {
  const auto tag = static_cast<std::uint64_t>(stage) << 32;
  return splitmix64(splitmix64(global_seed ^ tag) ^ index);
}

std::vector<double> parse_reference_spec(const std::string& spec) {
  if (spec.find(':') == std::string::npos) {
    return {csv::parse_double(spec, "reference")};
  }
  std::vector<double> values;
  std::size_t start = 0;
  while (true) {
    const auto colon = spec.find(':', start);
    values.push_back(csv::parse_double(std::string_view(spec).substr(start, colon - start), "reference range"));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  if (values.size() != 3) throw InputError("reference range must be start:stop:step");
  return reference_range(values[0], values[1], values[2]);
}

std::filesystem::path ArtifactLayout::stage_marker(Stage stage) const {
  return root / ".stages" / (std::string(stage_name(stage)) + ".done");
}

FitReport run_fit_stage(const PipelineConfig& config, const Zone& zone, std::size_t zone_index,
                        const ArtifactLayout& layout) {
  ZoneDataSpec spec;
  spec.step = config.fit.step;
  spec.max_force = config.fit.max_force;
  spec.noise_sigma = config.fit.noise_sigma;
  spec.repetitions = config.fit.repetitions;
  spec.seed = stage_seed(config.seed, Stage::kFit, zone_index);
  const auto samples = generate_zone_data(zone.model, spec);
  write_zone_csv(layout.zones_dir() / (zone.name + "_data.csv"), samples);
  const auto report = fit_exponential(samples, config.fit.settings);
  save_contact_model(layout.zones_dir() / (zone.name + ".json"), report.model);
  csv::write_text(layout.zones_dir() / (zone.name + "_fit.json"), fit_report_json(report).dump(2) + "\n");
  return report;
}

std::vector<PolicyTable> run_solve_stage(const PipelineConfig& config, const ContactModel& fitted,
                                         const std::filesystem::path& out_dir) {
  auto tables = solve_policy_sweep(fitted, config.references, config.grid, config.cost, config.solver);
  for (const auto& t : tables) write_policy(out_dir, t);
  save_contact_model(out_dir / "contact_model.json", fitted);
  return tables;
}

void write_loss_history(const std::filesystem::path& path, const std::vector<double>& history) {
  auto out = csv::open_for_write(path);
  out << "epoch,mse\n";
  for (std::size_t k = 0; k < history.size(); ++k) out << k + 1 << ',' << csv::format_double(history[k]) << '\n';
}

TrainResult run_train_stage(const PipelineConfig& config, const std::vector<std::filesystem::path>& policy_dirs,
                            const std::filesystem::path& out_dir) {
  if (policy_dirs.empty()) throw InputError("train needs at least one policy directory");
  std::vector<TrainingSample> dataset;
  for (const auto& dir : policy_dirs) {
    const auto model_path = dir / "contact_model.json";
    require_file(model_path);
    const auto model = load_contact_model(model_path);
    const auto policies = read_policy_dir(dir);
    if (policies.empty()) throw InputError("no policy files in " + dir.string());
    const auto part = build_dataset(policies, model);
    dataset.insert(dataset.end(), part.begin(), part.end());
  }
  write_dataset_csv(out_dir / "dataset.csv", dataset);

  TrainConfig tc = config.train;
  tc.seed = stage_seed(config.seed, Stage::kTrain, 0);
  const OutputBounds bounds{config.grid.u_min, config.grid.u_max};
  auto result = train(dataset, tc, bounds);
  save_model(out_dir / "adaptation_model.json", result.model);
  write_loss_history(out_dir / "loss_history.csv", result.loss_history);
  const nlohmann::ordered_json report = {{"samples", dataset.size()},
                                         {"train_size", result.train_size},
                                         {"validation_size", result.validation_size},
                                         {"first_epoch_mse", result.loss_history.front()},
                                         {"final_epoch_mse", result.loss_history.back()},
                                         {"validation_mse", result.validation_mse}};
  csv::write_text(out_dir / "train_report.json", report.dump(2) + "\n");
  return result;
}

std::vector<SuiteRow> run_evaluate_stage(const PipelineConfig& config, const AdaptationModel& model,
                                         const std::filesystem::path& out_dir) {
  SuiteSpec spec;
  spec.zones = config.zones;
  spec.references = config.suite.references;
  for (int k = 0; k < config.suite.seeds; ++k) {
    spec.seeds.push_back(stage_seed(config.seed, Stage::kEvaluate, static_cast<std::uint64_t>(k)));
  }
  spec.sim = config.sim;
  spec.sim.control_period = config.hybrid.control_period;
  spec.band_fraction = config.suite.band_fraction;
  spec.workers = config.suite.workers;

  ControllerConfig controller{config.hybrid, config.detector, model};
  auto rows = evaluate_suite(spec, controller);
  write_metrics_csv(out_dir / "metrics.csv", rows);

  // Per zone x reference aggregate.
  std::map<std::pair<std::string, double>, std::vector<const SuiteRow*>> cells;
  for (const auto& r : rows) cells[{r.zone, r.reference}].push_back(&r);
  auto summary = nlohmann::ordered_json::array();
  std::string text = "zone      ref_N  settled  median_converge_s  max_overshoot_N  retracted\n";
  for (const auto& z : config.zones) {
    for (double ref : config.suite.references) {
      const auto& cell = cells[{z.name, ref}];
      std::vector<double> conv;
      double max_os = 0.0;
      int settled = 0;
      int retracted = 0;
      for (const auto* r : cell) {
        if (r->fault) continue;
        if (r->metrics.settled && r->metrics.convergence_time) {
          ++settled;
          conv.push_back(*r->metrics.convergence_time);
        }
        max_os = std::max(max_os, r->metrics.overshoot);
        retracted += r->metrics.retracted ? 1 : 0;
      }
      const double med = median(conv);
      summary.push_back({{"zone", z.name},
                         {"held_out", z.held_out},
                         {"reference_n", ref},
                         {"episodes", cell.size()},
                         {"settled", settled},
                         {"median_converge_s", std::isnan(med) ? nlohmann::ordered_json(nullptr)
                                                               : nlohmann::ordered_json(med)},
                         {"max_overshoot_n", max_os},
                         {"retracted", retracted}});
      char line[160];
      std::snprintf(line, sizeof line, "%-8s %6.2f  %3d/%-3zu  %17.3f  %15.3f  %9d\n", z.name.c_str(), ref, settled,
                    cell.size(), med, max_os, retracted);
      text += line;
    }
  }
  csv::write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  csv::write_text(out_dir / "summary.txt", text);
  return rows;
}

int run_reproduce(const PipelineConfig& config, const ReproduceOptions& options, std::ostream& log) {
  const ArtifactLayout layout{config.out_dir};
  const auto training = training_zones(config.zones);
  if (training.empty()) {
    log << "reproduce: no training zones configured\n";
    return kExitInputError;
  }

  auto skip = [&](Stage s) { return options.resume && std::filesystem::exists(layout.stage_marker(s)); };
  if (options.dry_run) {
    log << "plan (out: " << layout.root.string() << ")\n";
    log << "  fit      " << training.size() << " zones, synthetic data sigma=" << config.fit.noise_sigma << " N x "
        << config.fit.repetitions << " repetitions" << (skip(Stage::kFit) ? " [resume: skip]" : "") << "\n";
    log << "  solve    " << training.size() << " zones x " << config.references.size() << " references on "
        << config.grid.x_steps << "x" << config.grid.u_steps << " grid" << (skip(Stage::kSolve) ? " [resume: skip]" : "")
        << "\n";
    log << "  train    " << config.train.epochs << " epochs, lr " << config.train.learning_rate
        << (skip(Stage::kTrain) ? " [resume: skip]" : "") << "\n";
    log << "  evaluate " << config.zones.size() << " zones x " << config.suite.references.size() << " references x "
        << config.suite.seeds << " seeds" << (skip(Stage::kEvaluate) ? " [resume: skip]" : "") << "\n";
    return kExitOk;
  }

  auto snapshot = to_json(config);
  csv::write_text(layout.root / "config.json", snapshot.dump(2) + "\n");

  Stage current = Stage::kFit;
  try {
    current = Stage::kFit;
    if (!skip(current)) {
      for (std::size_t k = 0; k < config.zones.size(); ++k) {
        const auto& zone = config.zones[k];
        if (zone.held_out) continue;
        const auto report = run_fit_stage(config, zone, k, layout);
        log << "fit " << zone.name << ": rms " << report.rms_residual << " N, " << report.iterations << " iterations"
            << (report.converged ? "" : " (not converged)") << "\n";
        if (!report.converged) {
          log << "stage fit failed: " << zone.name << " did not converge\n";
          return kExitNotConverged;
        }
      }
      csv::write_text(layout.stage_marker(current), "");
    }

    current = Stage::kSolve;
    if (!skip(current)) {
      for (const auto& zone : training) {
        const auto model_path = layout.zones_dir() / (zone.name + ".json");
        require_file(model_path);
        const auto tables = run_solve_stage(config, load_contact_model(model_path), layout.policies_dir(zone.name));
        int max_sweeps = 0;
        std::vector<double> unconverged;
        for (const auto& t : tables) {
          max_sweeps = std::max(max_sweeps, t.sweeps);
          if (!t.converged) unconverged.push_back(t.reference);
        }
        log << "solve " << zone.name << ": " << tables.size() << " policies, max " << max_sweeps << " sweeps\n";
        if (!unconverged.empty()) {
          log << "stage solve failed: " << unconverged.size() << " unconverged references in " << zone.name << "\n";
          return kExitNotConverged;
        }
      }
      csv::write_text(layout.stage_marker(current), "");
    }

    current = Stage::kTrain;
    if (!skip(current)) {
      std::vector<std::filesystem::path> dirs;
      for (const auto& zone : training) dirs.push_back(layout.policies_dir(zone.name));
      const auto result = run_train_stage(config, dirs, layout.train_dir());
      log << "train: " << result.train_size << " samples, epoch-1 mse " << result.loss_history.front()
          << ", final mse " << result.loss_history.back() << "\n";
      csv::write_text(layout.stage_marker(current), "");
    }

    current = Stage::kEvaluate;
    bool all_ok = true;
    if (!skip(current)) {
      const auto model_path = layout.train_dir() / "adaptation_model.json";
      require_file(model_path);
      const auto rows = run_evaluate_stage(config, load_model(model_path), layout.evaluate_dir());
      int settled = 0;
      for (const auto& r : rows) {
        const bool ok = !r.fault && r.metrics.settled && !r.metrics.retracted;
        settled += ok ? 1 : 0;
        all_ok = all_ok && ok;
      }
      log << "evaluate: " << settled << "/" << rows.size() << " episodes settled without retract\n";
      log << csv::read_text(layout.evaluate_dir() / "summary.txt");
      csv::write_text(layout.stage_marker(current), "");
    }
    return all_ok ? kExitOk : kExitUnsettled;
  } catch (const std::exception& e) {
    log << "stage " << stage_name(current) << " failed: " << e.what() << "\n";
    if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
        dynamic_cast<const ConfigError*>(&e)) {
      return kExitInputError;
    }
    return kExitFailure;
  }
}

}  // namespace adaptforce
