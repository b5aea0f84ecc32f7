#include "adaptforce/sim_harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <thread>

#include "adaptforce/csv.hpp"
#include "adaptforce/error.hpp"

namespace adaptforce {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int k = 0; k < 8; ++k) {
    h ^= (bits >> (8 * k)) & 0xFFu;
    h *= kFnvPrime;
  }
}

}  // namespace

void SimConfig::validate() const {
  if (!(control_period > 0.0)) throw InputError("control_period must be > 0");
  if (!(episode_duration > 0.0)) throw InputError("episode_duration must be > 0");
  if (!(sensor_noise_sigma >= 0.0)) throw InputError("sensor_noise_sigma must be >= 0");
  if (!std::isfinite(reference)) throw InputError("reference must be finite");
  if (!(start_height >= 0.0)) throw InputError("start_height must be >= 0");
  if (drift_amplitude != 0.0 && !(drift_period > 0.0)) throw InputError("drift_period must be > 0");
}

Trajectory run_episode(const SimConfig& config, HybridController& controller) {
  config.validate();
  Trajectory traj;
  traj.config = config;
  traj.model_hash = model_hash(config.zone, controller.config().gains);

  const auto steps = static_cast<std::size_t>(std::llround(config.episode_duration / config.control_period));
  traj.records.reserve(steps);
  std::mt19937_64 rng(config.seed);
  std::optional<std::normal_distribution<double>> noise;
  if (config.sensor_noise_sigma > 0.0) noise.emplace(0.0, config.sensor_noise_sigma);

  PlantState plant{-config.start_height, 0.0};
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * config.control_period;
    if (config.drift_amplitude != 0.0) {
      plant.surface_position = config.drift_amplitude * std::sin(2.0 * std::numbers::pi * t / config.drift_period);
    }
    const double depth = plant.depth();
    const double true_force = depth > 0.0 ? force_at(config.zone, depth) : 0.0;
    double measured = true_force;
    if (noise) measured += (*noise)(rng);
    measured = std::max(measured, 0.0);
    if (!std::isfinite(true_force) || !std::isfinite(measured)) {
      throw SimulationFault("non-finite contact force", k);
    }

    const auto step = controller.step(config.reference, measured);
    const double command = step.output.displacement;
    if (!std::isfinite(command)) throw SimulationFault("non-finite command", k);
    plant.tool_position += command;
    if (!std::isfinite(plant.tool_position)) throw SimulationFault("non-finite tool position", k);

    traj.records.push_back(
        {t, depth, measured, true_force, step.output.kp, step.output.mode, command, step.output.safety_event});
  }
  return traj;
}

EpisodeMetrics compute_metrics(const Trajectory& traj, double reference, double band_fraction) {
  if (traj.records.empty()) throw InputError("compute_metrics needs a non-empty trajectory");
  const auto& rec = traj.records;
  EpisodeMetrics m;
  m.retracted = std::any_of(rec.begin(), rec.end(), [](const auto& r) { return r.mode == Mode::kRetract; });

  double peak = rec.front().measured_force;
  for (const auto& r : rec) peak = std::max(peak, r.measured_force);
  m.overshoot = std::max(0.0, peak - reference);

  const std::size_t tail = std::max<std::size_t>(1, rec.size() / 5);
  double sum = 0.0;
  for (std::size_t k = rec.size() - tail; k < rec.size(); ++k) sum += std::abs(rec[k].measured_force - reference);
  m.steady_state_error = sum / static_cast<double>(tail);

  const auto contact = std::find_if(rec.begin(), rec.end(), [](const auto& r) { return r.mode == Mode::kRegulate; });
  if (contact == rec.end()) return m;
  m.contacted = true;

  const double band = band_fraction * std::abs(reference);
  const auto first = static_cast<std::size_t>(contact - rec.begin());
  std::size_t settle = rec.size();
  for (std::size_t k = rec.size(); k-- > first;) {
    if (std::abs(rec[k].measured_force - reference) > band) break;
    settle = k;
  }
  if (settle < rec.size()) {
    m.settled = true;
    m.convergence_time = rec[settle].t - rec[first].t;
  }
  return m;
}

std::vector<SuiteRow> evaluate_suite(const SuiteSpec& spec, const ControllerConfig& controller) {
  if (spec.zones.empty() || spec.references.empty() || spec.seeds.empty()) {
    throw InputError("evaluate_suite needs zones, references and seeds");
  }
  std::vector<SuiteRow> rows;
  for (const auto& z : spec.zones) {
    for (double r : spec.references) {
      for (auto s : spec.seeds) rows.push_back({z.name, r, s, {}, std::nullopt});
    }
  }
  const std::size_t per_zone = spec.references.size() * spec.seeds.size();

  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      auto& row = rows[k];
      SimConfig cfg = spec.sim;
      cfg.zone = spec.zones[k / per_zone].model;
      cfg.reference = row.reference;
      cfg.seed = row.seed;
      try {
        HybridController ctl(controller);
        const auto traj = run_episode(cfg, ctl);
        row.metrics = compute_metrics(traj, row.reference, spec.band_fraction);
      } catch (const std::exception& e) {
        row.fault = e.what();
      }
    }
  };

  const unsigned workers = std::clamp<unsigned>(spec.workers, 1u, static_cast<unsigned>(rows.size()));
  if (workers == 1) {
    run_range(0, rows.size());
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back(run_range, rows.size() * w / workers, rows.size() * (w + 1) / workers);
    }
  }
  return rows;
}

std::string model_hash(const ContactModel& zone, const GainSource& gains) {
  std::uint64_t h = kFnvOffset;
  fnv_mix(h, zone.a);
  fnv_mix(h, zone.b);
  fnv_mix(h, zone.c);
  if (const auto* m = std::get_if<AdaptationModel>(&gains)) {
    for (double v : m->params.flatten()) fnv_mix(h, v);
    for (int k = 0; k < 3; ++k) {
      fnv_mix(h, m->scaler.mean[k]);
      fnv_mix(h, m->scaler.std[k]);
    }
  } else if (const auto* c = std::get_if<ConstantKp>(&gains)) {
    fnv_mix(h, c->kp);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  auto out = csv::open_for_write(path);
  out << "t_s,depth_m,force_meas_n,force_true_n,kp,mode,command_m\n";
  for (const auto& r : traj.records) {
    out << csv::format_double(r.t) << ',' << csv::format_double(r.depth) << ','
        << csv::format_double(r.measured_force) << ',' << csv::format_double(r.true_force) << ','
        << csv::format_double(r.kp) << ',' << static_cast<int>(r.mode) << ',' << csv::format_double(r.command)
        << '\n';
  }
}

std::vector<TrajectoryRecord> read_trajectory_csv(const std::filesystem::path& path) {
  const auto table = csv::read_table(path, "t_s,depth_m,force_meas_n,force_true_n,kp,mode,command_m");
  std::vector<TrajectoryRecord> out;
  out.reserve(table.rows.size());
  std::size_t row = 1;
  for (const auto& f : table.rows) {
    ++row;
    const auto ctx = path.string() + ": row " + std::to_string(row);
    TrajectoryRecord r;
    r.t = csv::parse_double(f[0], ctx + " t_s");
    r.depth = csv::parse_double(f[1], ctx + " depth_m");
    r.measured_force = csv::parse_double(f[2], ctx + " force_meas_n");
    r.true_force = csv::parse_double(f[3], ctx + " force_true_n");
    r.kp = csv::parse_double(f[4], ctx + " kp");
    const double mode = csv::parse_double(f[5], ctx + " mode");
    if (mode != 1.0 && mode != 2.0 && mode != 3.0) throw ParseError(ctx + ": mode must be 1, 2 or 3");
    r.mode = static_cast<Mode>(static_cast<int>(mode));
    r.command = csv::parse_double(f[6], ctx + " command_m");
    out.push_back(r);
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const SuiteRow> rows) {
  auto out = csv::open_for_write(path);
  out << "zone,reference_n,seed,converge_s,overshoot_n,sse_n,settled,retracted\n";
  for (const auto& r : rows) {
    out << r.zone << ',' << csv::format_double(r.reference) << ',' << r.seed << ',';
    if (r.fault) {
      out << ",,,false,false\n";
      continue;
    }
    const auto& m = r.metrics;
    if (m.convergence_time) out << csv::format_double(*m.convergence_time);
    out << ',' << csv::format_double(m.overshoot) << ',' << csv::format_double(m.steady_state_error) << ','
        << (m.settled ? "true" : "false") << ',' << (m.retracted ? "true" : "false") << '\n';
  }
}

}  // namespace adaptforce
