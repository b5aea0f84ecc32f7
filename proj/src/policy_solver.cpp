#include "adaptforce/policy_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "adaptforce/csv.hpp"
#include "adaptforce/error.hpp"
#include "json.hpp"

namespace adaptforce {

namespace {

double clamp_depth(double x, const GridSpec& grid) { return std::clamp(x, grid.x_min, grid.x_max); }

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw InputError(std::string(what) + " must be finite");
}

// Per-solve constants shared read-only by all workers.
struct Backup {
  const GridSpec& grid;
  double discount;
  double inv_h;
  std::vector<double> x;
  std::vector<double> error;       // reference - force(x_i)
  std::vector<double> error_cost;  // dt * a * error^2
  std::vector<double> u;
  std::vector<double> input_cost;  // dt * b * u^2

  // One Bellman backup for nodes [begin, end). Returns nothing; writes
  // v_new and the argmin index per node.
  void run(int begin, int end, const std::vector<double>& v_old, std::vector<double>& v_new,
           std::vector<int>& argmin) const {
    const int n = grid.x_steps;
    const int nu = grid.u_steps;
    for (int i = begin; i < end; ++i) {
      const double xi = x[i];
      const double step_scale = grid.dt * error[i];
      double best = std::numeric_limits<double>::infinity();
      int best_j = 0;
      for (int j = 0; j < nu; ++j) {
        const double move = step_scale * u[j];
        double next_value;
        bool clamped = false;
        if (move == 0.0) {
          next_value = v_old[i];
        } else {
          const double nx = xi + move;
          if (nx <= grid.x_min) {
            next_value = v_old[0];
            clamped = true;
          } else if (nx >= grid.x_max) {
            next_value = v_old[n - 1];
            clamped = true;
          } else {
            const double pos = (nx - grid.x_min) * inv_h;
            int k = static_cast<int>(pos);
            if (k > n - 2) k = n - 2;
            const double t = pos - k;
            // (1-t)*lo + t*hi is monotone in lo and hi under rounding.
            next_value = (1.0 - t) * v_old[k] + t * v_old[k + 1];
          }
        }
        const double q = error_cost[i] + input_cost[j] + discount * next_value;
        if (q < best) {
          best = q;
          best_j = j;
        }
        // Larger nonnegative gains land on the same clamped node at higher input cost.
        if (clamped && u[j] >= 0.0) break;
      }
      v_new[i] = best;
      argmin[i] = best_j;
    }
  }
};

}  // namespace

ForceLaw as_force_law(const ContactModel& model) {
  return [model](double x) { return force_at(model, x); };
}

void GridSpec::validate() const {
  for (double v : {x_min, x_max, u_min, u_max, dt}) require_finite(v, "grid value");
  if (!(x_min < x_max)) throw InputError("grid requires x_min < x_max");
  if (!(u_min < u_max)) throw InputError("grid requires u_min < u_max");
  if (x_steps < 2) throw InputError("grid requires x_steps >= 2");
  if (u_steps < 2) throw InputError("grid requires u_steps >= 2");
  if (!(dt > 0.0)) throw InputError("grid requires dt > 0");
}

void CostParams::validate() const {
  require_finite(a, "cost a");
  require_finite(b, "cost b");
  if (!(a > 0.0)) throw InputError("cost requires a > 0");
  if (!(b >= 0.0)) throw InputError("cost requires b >= 0");
}

double step_dynamics(const ForceLaw& force, double x, double kp, double reference, double dt,
                     const GridSpec& grid) {
  require_finite(x, "x");
  require_finite(kp, "kp");
  require_finite(reference, "reference");
  if (!(dt > 0.0)) throw InputError("dt must be > 0");
  const double next = x + dt * kp * (reference - force(x));
  require_finite(next, "next_x");
  return clamp_depth(next, grid);
}

double step_dynamics(const ContactModel& model, double x, double kp, double reference, double dt,
                     const GridSpec& grid) {
  return step_dynamics(as_force_law(model), x, kp, reference, dt, grid);
}

double stage_cost(const CostParams& params, const ForceLaw& force, double x, double kp, double reference,
                  double dt) {
  require_finite(x, "x");
  require_finite(kp, "kp");
  require_finite(reference, "reference");
  if (!(dt > 0.0)) throw InputError("dt must be > 0");
  const double e = reference - force(x);
  return dt * (params.a * e * e + params.b * kp * kp);
}

double stage_cost(const CostParams& params, const ContactModel& model, double x, double kp, double reference,
                  double dt) {
  return stage_cost(params, as_force_law(model), x, kp, reference, dt);
}

PolicyTable solve_policy(const ForceLaw& force, double reference, const GridSpec& grid, const CostParams& cost,
                         const SolverOptions& options) {
  grid.validate();
  cost.validate();
  require_finite(reference, "reference");
  if (!(options.discount > 0.0 && options.discount <= 1.0)) throw InputError("discount must be in (0, 1]");
  if (!(options.tolerance > 0.0)) throw InputError("tolerance must be > 0");
  if (options.max_sweeps < 1) throw InputError("max_sweeps must be >= 1");

  const int n = grid.x_steps;
  const int nu = grid.u_steps;
  Backup backup{grid, options.discount, (n - 1) / (grid.x_max - grid.x_min), {}, {}, {}, {}, {}};
  backup.x.resize(n);
  backup.error.resize(n);
  backup.error_cost.resize(n);
  for (int i = 0; i < n; ++i) {
    backup.x[i] = grid.x_at(i);
    const double f = force(backup.x[i]);
    require_finite(f, "force");
    backup.error[i] = reference - f;
    backup.error_cost[i] = grid.dt * cost.a * backup.error[i] * backup.error[i];
  }
  backup.u.resize(nu);
  backup.input_cost.resize(nu);
  for (int j = 0; j < nu; ++j) {
    backup.u[j] = grid.u_at(j);
    backup.input_cost[j] = grid.dt * cost.b * backup.u[j] * backup.u[j];
  }

  const unsigned workers = std::clamp(options.workers, 1u, static_cast<unsigned>(n));
  std::vector<double> v_old(n, 0.0);
  std::vector<double> v_new(n, 0.0);
  std::vector<int> argmin(n, 0);

  PolicyTable table;
  table.reference = reference;
  table.grid = grid;
  table.cost = cost;

  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    if (workers == 1) {
      backup.run(0, n, v_old, v_new, argmin);
    } else {
      std::vector<std::jthread> pool;
      pool.reserve(workers);
      for (unsigned w = 0; w < workers; ++w) {
        const int begin = static_cast<int>(static_cast<long>(n) * w / workers);
        const int end = static_cast<int>(static_cast<long>(n) * (w + 1) / workers);
        pool.emplace_back([&, begin, end] { backup.run(begin, end, v_old, v_new, argmin); });
      }
    }

    double dmin = std::numeric_limits<double>::infinity();
    double dmax = -std::numeric_limits<double>::infinity();
    double dabs = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = v_new[i] - v_old[i];
      if (!std::isfinite(v_new[i])) throw InputError("value function became non-finite");
      if (v_new[i] < v_old[i]) table.monotone = false;
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
      dabs = std::max(dabs, std::abs(d));
    }
    std::swap(v_old, v_new);
    table.sweeps = sweep;
    table.last_delta_min = dmin;
    table.last_delta_max = dmax;

    const double criterion = options.stop_rule == StopRule::kSpan ? dmax - dmin : dabs;
    if (criterion < options.tolerance) {
      table.converged = true;
      break;
    }
  }

  table.x_grid = backup.x;
  table.value_function = v_old;
  table.kp_values.resize(n);
  for (int i = 0; i < n; ++i) table.kp_values[i] = backup.u[argmin[i]];
  return table;
}

PolicyTable solve_policy(const ContactModel& model, double reference, const GridSpec& grid, const CostParams& cost,
                         const SolverOptions& options) {
  return solve_policy(as_force_law(model), reference, grid, cost, options);
}

std::vector<PolicyTable> solve_policy_sweep(const ContactModel& model, std::span<const double> references,
                                            const GridSpec& grid, const CostParams& cost,
                                            const SolverOptions& options) {
  if (references.empty()) throw InputError("references must be non-empty");
  std::vector<PolicyTable> out;
  out.reserve(references.size());
  for (double r : references) out.push_back(solve_policy(model, r, grid, cost, options));
  return out;
}

std::vector<double> reference_range(double start, double stop, double step) {
  if (!(step > 0.0) || !std::isfinite(start) || !std::isfinite(stop) || stop < start) {
    throw InputError("invalid reference range");
  }
  const auto count = static_cast<int>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> out(count);
  for (int k = 0; k < count; ++k) out[k] = start + step * k;
  return out;
}

std::vector<double> default_references() { return reference_range(4.0, 24.0, 0.5); }

double policy_kp_at(const PolicyTable& table, double x) {
  const auto& xs = table.x_grid;
  if (xs.empty()) throw InputError("empty policy table");
  if (x <= xs.front()) return table.kp_values.front();
  if (x >= xs.back()) return table.kp_values.back();
  const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
  const std::size_t lo = hi - 1;
  const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return (1.0 - t) * table.kp_values[lo] + t * table.kp_values[hi];
}

std::string policy_file_stem(double reference) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "policy_r%.3f", reference);
  return buf;
}

void write_policy(const std::filesystem::path& dir, const PolicyTable& table) {
  const auto stem = policy_file_stem(table.reference);
  {
    auto out = csv::open_for_write(dir / (stem + ".csv"));
    out << "x_m,kp,value\n";
    for (std::size_t i = 0; i < table.x_grid.size(); ++i) {
      out << csv::format_double(table.x_grid[i]) << ',' << csv::format_double(table.kp_values[i]) << ','
          << csv::format_double(table.value_function[i]) << '\n';
    }
  }
  const auto& g = table.grid;
  const nlohmann::ordered_json meta = {
      {"reference_n", table.reference},
      {"converged", table.converged},
      {"sweeps", table.sweeps},
      {"monotone", table.monotone},
      {"grid",
       {{"x_min", g.x_min},
        {"x_max", g.x_max},
        {"x_steps", g.x_steps},
        {"u_min", g.u_min},
        {"u_max", g.u_max},
        {"u_steps", g.u_steps},
        {"dt", g.dt}}},
      {"cost", {{"a", table.cost.a}, {"b", table.cost.b}}},
  };
  csv::write_text(dir / (stem + ".json"), meta.dump(2) + "\n");
}

PolicyTable read_policy(const std::filesystem::path& csv_path) {
  auto json_path = csv_path;
  json_path.replace_extension(".json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(csv::read_text(json_path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(json_path.string() + ": " + e.what());
  }

  PolicyTable table;
  try {
    table.reference = meta.at("reference_n").get<double>();
    table.converged = meta.at("converged").get<bool>();
    table.sweeps = meta.at("sweeps").get<int>();
    table.monotone = meta.value("monotone", true);
    const auto& g = meta.at("grid");
    table.grid = GridSpec{g.at("x_min").get<double>(), g.at("x_max").get<double>(), g.at("x_steps").get<int>(),
                          g.at("u_min").get<double>(), g.at("u_max").get<double>(), g.at("u_steps").get<int>(),
                          g.at("dt").get<double>()};
    table.cost = CostParams{meta.at("cost").at("a").get<double>(), meta.at("cost").at("b").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(json_path.string() + ": " + e.what());
  }

  const auto rows = csv::read_table(csv_path, "x_m,kp,value");
  std::size_t row = 1;
  for (const auto& fields : rows.rows) {
    ++row;
    const auto ctx = csv_path.string() + ": row " + std::to_string(row);
    table.x_grid.push_back(csv::parse_double(fields[0], ctx + " x_m"));
    table.kp_values.push_back(csv::parse_double(fields[1], ctx + " kp"));
    table.value_function.push_back(csv::parse_double(fields[2], ctx + " value"));
  }
  if (static_cast<int>(table.x_grid.size()) != table.grid.x_steps) {
    throw ParseError(csv_path.string() + ": row count does not match grid x_steps");
  }
  return table;
}

std::vector<PolicyTable> read_policy_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (p.extension() == ".csv" && p.filename().string().rfind("policy_r", 0) == 0) files.push_back(p);
  }
  std::vector<PolicyTable> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_policy(f));
  std::sort(out.begin(), out.end(), [](const auto& l, const auto& r) { return l.reference < r.reference; });
  return out;
}

}  // namespace adaptforce
