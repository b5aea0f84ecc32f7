#include "adaptforce/adaptation_mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "adaptforce/csv.hpp"
#include "adaptforce/error.hpp"
#include "json.hpp"

namespace adaptforce {

namespace {

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& z) {
  return z.cwiseMax(0.0);
}

template <typename Derived>
auto relu_mask(const Eigen::MatrixBase<Derived>& z) {
  return (z.array() > 0.0).template cast<double>().matrix();
}

template <typename Fn>
void visit_blocks(MlpParams& p, Fn&& fn) {
  fn(p.w1.data(), p.w1.size());
  fn(p.b1.data(), p.b1.size());
  fn(p.w2.data(), p.w2.size());
  fn(p.b2.data(), p.b2.size());
  fn(p.w3.data(), p.w3.size());
  fn(p.b3.data(), p.b3.size());
}

template <typename Matrix>
nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

double json_number(const nlohmann::json& v, const std::string& ctx) {
  if (!v.is_number()) throw ParseError(ctx + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ParseError(ctx + ": value is not finite");
  return d;
}

template <typename Matrix>
void matrix_from_json(const nlohmann::json& j, Matrix& m, const std::string& ctx) {
  const auto shape = std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != m.rows()) {
    throw ParseError(ctx + ": shape mismatch, expected " + shape);
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != m.cols()) {
      throw ParseError(ctx + ": shape mismatch, expected " + shape);
    }
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = json_number(row[static_cast<std::size_t>(c)],
                            ctx + "[" + std::to_string(r) + "][" + std::to_string(c) + "]");
    }
  }
}

template <typename Vector>
void vector_from_json(const nlohmann::json& j, Vector& v, const std::string& ctx) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != v.size()) {
    throw ParseError(ctx + ": shape mismatch, expected " + std::to_string(v.size()) + " values");
  }
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    v[k] = json_number(j[static_cast<std::size_t>(k)], ctx + "[" + std::to_string(k) + "]");
  }
}

}  // namespace

FeatureScaler FeatureScaler::fit(std::span<const TrainingSample> samples) {
  if (samples.empty()) throw InputError("cannot fit scaler on an empty dataset");
  Features sum = Features::Zero();
  for (const auto& s : samples) sum += features_of(s);
  const double n = static_cast<double>(samples.size());
  FeatureScaler scaler;
  scaler.mean = sum / n;
  Features sq = Features::Zero();
  for (const auto& s : samples) sq += (features_of(s) - scaler.mean).cwiseAbs2();
  for (int k = 0; k < 3; ++k) {
    const double sd = std::sqrt(sq[k] / n);
    scaler.std[k] = sd > 1e-12 ? sd : 1.0;
  }
  return scaler;
}

std::array<double, MlpParams::kParamCount> MlpParams::flatten() const {
  std::array<double, kParamCount> out{};
  std::size_t pos = 0;
  MlpParams copy = *this;
  visit_blocks(copy, [&](double* data, Eigen::Index size) {
    std::copy(data, data + size, out.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += static_cast<std::size_t>(size);
  });
  return out;
}

MlpParams MlpParams::unflatten(const std::array<double, kParamCount>& flat) {
  MlpParams p;
  std::size_t pos = 0;
  visit_blocks(p, [&](double* data, Eigen::Index size) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
              flat.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(size)), data);
    pos += static_cast<std::size_t>(size);
  });
  return p;
}

bool MlpParams::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() && w3.allFinite() &&
         b3.allFinite();
}

ForwardTrace forward_trace(const MlpParams& p, const Features& scaled) {
  ForwardTrace t;
  t.z1 = p.w1 * scaled + p.b1;
  t.h1 = relu(t.z1);
  t.z2 = p.w2 * t.h1 + p.b2;
  t.h2 = relu(t.z2);
  t.z3 = (p.w3 * t.h2)(0, 0) + p.b3(0, 0);
  t.output = std::max(t.z3, 0.0);
  return t;
}

double forward_raw(const MlpParams& params, const Features& scaled) { return forward_trace(params, scaled).output; }

double forward(const MlpParams& params, const FeatureScaler& scaler, const Features& features,
               const OutputBounds& bounds) {
  if (!features.allFinite()) throw InputError("network features must be finite");
  const double raw = forward_raw(params, scaler.transform(features));
  return std::clamp(raw, bounds.u_min, bounds.u_max);
}

double forward(const AdaptationModel& model, const Features& features) {
  return forward(model.params, model.scaler, features, model.bounds);
}

LossAndGradient loss_and_gradient(const MlpParams& p, std::span<const TrainingSample> batch,
                                  const FeatureScaler& scaler) {
  if (batch.empty()) throw InputError("loss_and_gradient needs a non-empty batch");
  LossAndGradient out;
  auto& g = out.gradient;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    const Features x = scaler.transform(features_of(s));
    const ForwardTrace t = forward_trace(p, x);
    const double err = t.output - s.kp_label;
    out.mse += err * err;

    const double dz3 = t.z3 > 0.0 ? 2.0 * err * inv_n : 0.0;
    g.w3 += dz3 * t.h2.transpose();
    g.b3(0, 0) += dz3;
    const Eigen::Matrix<double, 3, 1> dz2 = (p.w3.transpose() * dz3).cwiseProduct(relu_mask(t.z2));
    g.w2 += dz2 * t.h1.transpose();
    g.b2 += dz2;
    const Eigen::Matrix<double, 6, 1> dz1 = (p.w2.transpose() * dz2).cwiseProduct(relu_mask(t.z1));
    g.w1 += dz1 * x.transpose();
    g.b1 += dz1;
  }
  out.mse *= inv_n;
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InputError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw InputError("learning_rate must be > 0");
  if (batch_size < 1 || mini_batches_per_batch < 1) throw InputError("batch sizes must be >= 1");
  if (batch_size % mini_batches_per_batch != 0) {
    throw InputError("batch_size must be divisible by mini_batches_per_batch");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw InputError("validation_fraction must be in [0, 1)");
  }
}

MlpParams initialize_params(std::uint64_t seed, double output_bias) {
  std::mt19937_64 rng(seed);
  MlpParams p;
  auto he = [&rng](auto& m, double fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  };
  he(p.w1, 3.0);
  he(p.w2, 6.0);
  he(p.w3, 3.0);
  p.b3(0, 0) = output_bias;
  return p;
}

TrainResult train(std::span<const TrainingSample> dataset, const TrainConfig& config, const OutputBounds& bounds) {
  config.validate();
  if (dataset.size() < static_cast<std::size_t>(config.batch_size)) {
    throw InputError("dataset has " + std::to_string(dataset.size()) + " samples, fewer than one batch of " +
                     std::to_string(config.batch_size));
  }

  std::mt19937_64 rng(config.seed);
  TrainResult result;
  result.model.bounds = bounds;
  result.model.scaler = FeatureScaler::fit(dataset);
  result.model.params = initialize_params(rng(), config.output_bias_init);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(config.validation_fraction * static_cast<double>(dataset.size()));
  n_val = std::min(n_val, dataset.size() - static_cast<std::size_t>(config.batch_size));
  std::vector<TrainingSample> validation;
  std::vector<TrainingSample> training;
  validation.reserve(n_val);
  training.reserve(dataset.size() - n_val);
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_val ? validation : training).push_back(dataset[order[k]]);
  }
  result.train_size = training.size();
  result.validation_size = validation.size();

  constexpr auto kN = static_cast<std::size_t>(MlpParams::kParamCount);
  std::array<double, kN> theta = result.model.params.flatten();
  std::array<double, kN> m{};
  std::array<double, kN> v{};
  double beta1_pow = 1.0;
  double beta2_pow = 1.0;

  const auto mini = static_cast<std::size_t>(config.batch_size / config.mini_batches_per_batch);
  std::vector<TrainingSample> chunk;
  chunk.reserve(mini);
  std::vector<std::size_t> idx(training.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto& scaler = result.model.scaler;

  result.loss_history.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_sse = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += mini) {
      const std::size_t end = std::min(start + mini, idx.size());
      chunk.clear();
      for (std::size_t k = start; k < end; ++k) chunk.push_back(training[idx[k]]);

      const auto lg = loss_and_gradient(MlpParams::unflatten(theta), chunk, scaler);
      epoch_sse += lg.mse * static_cast<double>(chunk.size());
      const auto grad = lg.gradient.flatten();

      beta1_pow *= config.beta1;
      beta2_pow *= config.beta2;
      const double lr_t = config.learning_rate * std::sqrt(1.0 - beta2_pow) / (1.0 - beta1_pow);
      for (std::size_t k = 0; k < kN; ++k) {
        m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * grad[k];
        v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * grad[k] * grad[k];
        theta[k] -= lr_t * m[k] / (std::sqrt(v[k]) + config.epsilon * std::sqrt(1.0 - beta2_pow));
      }
    }
    result.loss_history.push_back(epoch_sse / static_cast<double>(training.size()));
  }

  result.model.params = MlpParams::unflatten(theta);
  result.validation_mse = validation.empty() ? std::numeric_limits<double>::quiet_NaN()
                                             : loss_and_gradient(result.model.params, validation, scaler).mse;
  return result;
}

std::vector<TrainingSample> build_dataset(std::span<const PolicyTable> policies, const ContactModel& model) {
  if (policies.empty()) throw InputError("build_dataset needs at least one policy");
  std::vector<TrainingSample> out;
  std::size_t total = 0;
  for (const auto& p : policies) total += p.x_grid.size();
  out.reserve(total);
  for (const auto& p : policies) {
    if (p.kp_values.size() != p.x_grid.size()) throw InputError("policy table has mismatched lengths");
    for (std::size_t i = 0; i < p.x_grid.size(); ++i) {
      out.push_back({p.reference, force_at(model, p.x_grid[i]), stiffness_at(model, p.x_grid[i]), p.kp_values[i]});
    }
  }
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, std::span<const TrainingSample> samples) {
  auto out = csv::open_for_write(path);
  out << "r_n,f_n,dfdx_n_per_m,kp\n";
  for (const auto& s : samples) {
    out << csv::format_double(s.reference) << ',' << csv::format_double(s.force) << ','
        << csv::format_double(s.stiffness) << ',' << csv::format_double(s.kp_label) << '\n';
  }
}

std::vector<TrainingSample> read_dataset_csv(const std::filesystem::path& path) {
  const auto table = csv::read_table(path, "r_n,f_n,dfdx_n_per_m,kp");
  std::vector<TrainingSample> out;
  out.reserve(table.rows.size());
  std::size_t row = 1;
  for (const auto& f : table.rows) {
    ++row;
    const auto ctx = path.string() + ": row " + std::to_string(row);
    out.push_back({csv::parse_double(f[0], ctx + " r_n"), csv::parse_double(f[1], ctx + " f_n"),
                   csv::parse_double(f[2], ctx + " dfdx_n_per_m"), csv::parse_double(f[3], ctx + " kp")});
  }
  return out;
}

void save_model(const std::filesystem::path& path, const AdaptationModel& model) {
  const auto& p = model.params;
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["scaler"] = {{"mean", {model.scaler.mean[0], model.scaler.mean[1], model.scaler.mean[2]}},
                 {"std", {model.scaler.std[0], model.scaler.std[1], model.scaler.std[2]}}};
  j["bounds"] = {{"u_min", model.bounds.u_min}, {"u_max", model.bounds.u_max}};
  auto vec = [](const auto& v) {
    std::vector<double> out(v.data(), v.data() + v.size());
    return out;
  };
  j["layers"] = nlohmann::ordered_json::array({
      {{"w", matrix_to_json(p.w1)}, {"b", vec(p.b1)}},
      {{"w", matrix_to_json(p.w2)}, {"b", vec(p.b2)}},
      {{"w", matrix_to_json(p.w3)}, {"b", vec(p.b3)}},
  });
  csv::write_text(path, j.dump(2) + "\n");
}

AdaptationModel load_model(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(csv::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const auto ctx = path.string();
  if (!j.is_object() || !j.contains("version") || j["version"] != 1) {
    throw ParseError(ctx + ": unsupported or missing model version");
  }
  AdaptationModel model;
  if (!j.contains("scaler")) throw ParseError(ctx + ": missing scaler");
  vector_from_json(j["scaler"].value("mean", nlohmann::json()), model.scaler.mean, ctx + ": scaler.mean");
  vector_from_json(j["scaler"].value("std", nlohmann::json()), model.scaler.std, ctx + ": scaler.std");
  if ((model.scaler.std.array() <= 0.0).any()) throw ParseError(ctx + ": scaler.std must be positive");
  if (j.contains("bounds")) {
    model.bounds.u_min = json_number(j["bounds"].value("u_min", nlohmann::json()), ctx + ": bounds.u_min");
    model.bounds.u_max = json_number(j["bounds"].value("u_max", nlohmann::json()), ctx + ": bounds.u_max");
  }
  const auto& layers = j.value("layers", nlohmann::json());
  if (!layers.is_array() || layers.size() != 3) throw ParseError(ctx + ": expected 3 layers");
  auto& p = model.params;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto lctx = ctx + ": layer " + std::to_string(k + 1);
    const auto& L = layers[k];
    if (!L.is_object() || !L.contains("w") || !L.contains("b")) throw ParseError(lctx + ": missing w or b");
    switch (k) {
      case 0:
        matrix_from_json(L["w"], p.w1, lctx + " w");
        vector_from_json(L["b"], p.b1, lctx + " b");
        break;
      case 1:
        matrix_from_json(L["w"], p.w2, lctx + " w");
        vector_from_json(L["b"], p.b2, lctx + " b");
        break;
      default:
        matrix_from_json(L["w"], p.w3, lctx + " w");
        vector_from_json(L["b"], p.b3, lctx + " b");
        break;
    }
  }
  return model;
}

}  // namespace adaptforce
