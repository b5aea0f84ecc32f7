#include "adaptforce/contact_model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include "adaptforce/csv.hpp"
#include "adaptforce/error.hpp"
#include "json.hpp"

namespace adaptforce {

namespace {

void require_depth(double depth) {
  if (!std::isfinite(depth)) {
    throw InputError("depth must be finite");
  }
  if (depth < 0.0) {
    throw InputError("depth must be >= 0");
  }
}

// Internal fit coordinates. force(x) = A * expm1(beta * x) + D with
// A = exp(log_a), beta = beta_floor + exp(log_beta), D = force(0).
struct FitPoint {
  Eigen::Vector3d p;  // (log_a, log_beta, D)
  double beta_floor;

  double a() const { return std::exp(p[0]); }
  double beta() const { return beta_floor + std::exp(p[1]); }

  ContactModel model() const {
    const double a = this->a();
    return ContactModel{a, -beta(), p[2] - a};
  }
};

double sum_squares(const FitPoint& fp, std::span<const DepthForceSample> samples) {
  const double a = fp.a();
  const double beta = fp.beta();
  double sse = 0.0;
  for (const auto& s : samples) {
    const double r = a * std::expm1(beta * s.depth) + fp.p[2] - s.force;
    sse += r * r;
  }
  return sse;
}

void residuals_and_jacobian(const FitPoint& fp, std::span<const DepthForceSample> samples, Eigen::VectorXd& r,
                            Eigen::MatrixXd& jac) {
  const double a = fp.a();
  const double excess = std::exp(fp.p[1]);
  const double beta = fp.beta_floor + excess;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double x = samples[i].depth;
    const double em1 = std::expm1(beta * x);
    const auto row = static_cast<Eigen::Index>(i);
    r[row] = a * em1 + fp.p[2] - samples[i].force;
    jac(row, 0) = a * em1;
    jac(row, 1) = a * x * (em1 + 1.0) * excess;
    jac(row, 2) = 1.0;
  }
}

// Curvature from three equal-width depth bins: for an exponential plus
// offset the successive differences of bin means grow by exp(beta * width).
double initial_beta(std::span<const DepthForceSample> sorted, double span) {
  const double x0 = sorted.front().depth;
  const double width = span / 3.0;
  double sums[3] = {0, 0, 0};
  int counts[3] = {0, 0, 0};
  for (const auto& s : sorted) {
    const int bin = std::min(2, static_cast<int>((s.depth - x0) / width));
    sums[bin] += s.force;
    ++counts[bin];
  }
  const double fallback = 1.0 / span;
  if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0) return fallback;
  const double m0 = sums[0] / counts[0];
  const double m1 = sums[1] / counts[1];
  const double m2 = sums[2] / counts[2];
  const double ratio = (m2 - m1) / (m1 - m0);
  if (!std::isfinite(ratio) || ratio <= 1.0 + 1e-9) return fallback;
  return std::clamp(std::log(ratio) / width, 1e-3 / span, 50.0 / span);
}

}  // namespace

double force_at(const ContactModel& model, double depth) {
  require_depth(depth);
  return model.a * std::exp(-model.b * depth) + model.c;
}

double stiffness_at(const ContactModel& model, double depth) {
  require_depth(depth);
  return -model.a * model.b * std::exp(-model.b * depth);
}

void validate_contact_model(const ContactModel& model, double x_max, double offset_tol) {
  if (!std::isfinite(model.a) || !std::isfinite(model.b) || !std::isfinite(model.c)) {
    throw InputError("contact model parameters must be finite");
  }
  if (!(model.a > 0.0)) throw InputError("contact model requires a > 0");
  if (!(model.b < 0.0)) throw InputError("contact model requires b < 0");
  if (!(x_max > 0.0) || !std::isfinite(x_max)) throw InputError("x_max must be positive");
  const double f0 = model.a + model.c;
  if (std::abs(f0) > offset_tol) {
    throw InputError("contact model force at zero depth is " + std::to_string(f0) + " N, exceeds offset tolerance");
  }
}

FitReport fit_exponential(std::span<const DepthForceSample> samples, const FitSettings& settings) {
  if (samples.size() < 4) {
    throw InputError("fit_exponential needs at least 4 samples, got " + std::to_string(samples.size()));
  }
  for (const auto& s : samples) {
    if (!std::isfinite(s.depth) || !std::isfinite(s.force)) throw InputError("samples must be finite");
  }
  std::vector<DepthForceSample> sorted(samples.begin(), samples.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& l, const auto& r) { return l.depth < r.depth; });
  const double span = sorted.back().depth - sorted.front().depth;
  if (!(span > 0.0)) throw InputError("samples must span a nonzero depth range");

  FitPoint fp{};
  fp.beta_floor = 1e-6 / span;
  double beta0 = std::max(initial_beta(sorted, span), 2.0 * fp.beta_floor);

  // With beta fixed the law is linear in (A, D): solve that 2x2 problem for the start point.
  Eigen::Matrix2d normal = Eigen::Matrix2d::Zero();
  Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
  for (const auto& s : sorted) {
    const Eigen::Vector2d basis(std::expm1(beta0 * s.depth), 1.0);
    normal += basis * basis.transpose();
    rhs += basis * s.force;
  }
  Eigen::Vector2d ad = normal.ldlt().solve(rhs);
  if (!(ad[0] > 0.0) || !std::isfinite(ad[0])) {
    const double rise = std::max(sorted.back().force - sorted.front().force, 1e-6);
    ad[0] = rise / std::expm1(beta0 * sorted.back().depth);
    ad[1] = sorted.front().force;
  }
  fp.p = Eigen::Vector3d(std::log(ad[0]), std::log(beta0 - fp.beta_floor), ad[1]);

  const auto n = static_cast<Eigen::Index>(sorted.size());
  Eigen::VectorXd r(n);
  Eigen::MatrixXd jac(n, 3);
  double sse = sum_squares(fp, sorted);
  double damping = settings.initial_damping;

  FitReport report;
  int iter = 0;
  while (iter < settings.max_iterations) {
    ++iter;
    residuals_and_jacobian(fp, sorted, r, jac);
    const Eigen::Matrix3d jtj = jac.transpose() * jac;
    const Eigen::Vector3d grad = jac.transpose() * r;

    Eigen::Matrix3d damped = jtj;
    const double diag_floor = 1e-15 * jtj.diagonal().maxCoeff();
    for (int k = 0; k < 3; ++k) damped(k, k) += damping * std::max(jtj(k, k), diag_floor);
    const Eigen::Vector3d step = damped.ldlt().solve(-grad);
    if (!step.allFinite()) {
      damping *= 10.0;
      continue;
    }

    FitPoint trial = fp;
    trial.p += step;
    const double trial_sse = sum_squares(trial, sorted);
    if (std::isfinite(trial_sse) && trial_sse < sse) {
      fp = trial;
      sse = trial_sse;
      damping = std::max(damping * 0.1, 1e-12);
    } else {
      damping = std::min(damping * 10.0, 1e16);
    }
    if (step.norm() < settings.step_tol * (1.0 + fp.p.norm())) {
      report.converged = true;
      break;
    }
  }

  report.model = fp.model();
  report.iterations = iter;
  report.rms_residual = std::sqrt(sse / static_cast<double>(sorted.size()));
  return report;
}

std::vector<DepthForceSample> generate_zone_data(const ContactModel& model, const ZoneDataSpec& spec) {
  if (!(spec.step > 0.0) || !std::isfinite(spec.step)) throw InputError("step must be > 0");
  if (spec.repetitions < 1) throw InputError("repetitions must be >= 1");
  if (spec.noise_sigma < 0.0 || !std::isfinite(spec.noise_sigma)) throw InputError("noise_sigma must be >= 0");
  if (!std::isfinite(spec.max_force)) throw InputError("max_force must be finite");

  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<double>> runs;
  runs.reserve(static_cast<std::size_t>(spec.repetitions));
  std::size_t shortest = spec.max_samples;
  for (int rep = 0; rep < spec.repetitions; ++rep) {
    std::vector<double> readings;
    for (std::size_t k = 0;; ++k) {
      if (k == spec.max_samples) {
        throw InputError("zone never exceeds max_force within max_samples steps");
      }
      double reading = force_at(model, static_cast<double>(k) * spec.step);
      if (spec.noise_sigma > 0.0) {
        reading += std::normal_distribution<double>(0.0, spec.noise_sigma)(rng);
      }
      readings.push_back(reading);
      if (reading > spec.max_force) break;
    }
    shortest = std::min(shortest, readings.size());
    runs.push_back(std::move(readings));
  }

  std::vector<DepthForceSample> out(shortest);
  for (std::size_t k = 0; k < shortest; ++k) {
    double sum = 0.0;
    for (const auto& run : runs) sum += run[k];
    out[k] = {static_cast<double>(k) * spec.step, sum / static_cast<double>(runs.size())};
  }
  return out;
}

void write_zone_csv(const std::filesystem::path& path, std::span<const DepthForceSample> samples) {
  auto out = csv::open_for_write(path);
  out << "depth_m,force_n\n";
  for (const auto& s : samples) {
    out << csv::format_double(s.depth) << ',' << csv::format_double(s.force) << '\n';
  }
}

std::vector<DepthForceSample> read_zone_csv(const std::filesystem::path& path) {
  const auto table = csv::read_table(path, "depth_m,force_n");
  std::vector<DepthForceSample> out;
  out.reserve(table.rows.size());
  std::size_t row = 1;
  for (const auto& fields : table.rows) {
    ++row;
    const std::string ctx = path.string() + ": row " + std::to_string(row);
    DepthForceSample s{csv::parse_double(fields[0], ctx + " depth_m"), csv::parse_double(fields[1], ctx + " force_n")};
    if (!std::isfinite(s.depth) || !std::isfinite(s.force) || s.depth < 0.0) {
      throw ParseError(ctx + ": depth must be finite and >= 0, force finite");
    }
    out.push_back(s);
  }
  return out;
}

void save_contact_model(const std::filesystem::path& path, const ContactModel& model) {
  const nlohmann::ordered_json j = {{"a", model.a}, {"b", model.b}, {"c", model.c}};
  csv::write_text(path, j.dump(2) + "\n");
}

ContactModel load_contact_model(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(csv::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  ContactModel m;
  for (auto [key, slot] : {std::pair{"a", &m.a}, std::pair{"b", &m.b}, std::pair{"c", &m.c}}) {
    if (!j.contains(key) || !j[key].is_number()) {
      throw ParseError(path.string() + ": field '" + key + "' missing or not a number");
    }
    *slot = j[key].get<double>();
  }
  return m;
}

}  // namespace adaptforce
