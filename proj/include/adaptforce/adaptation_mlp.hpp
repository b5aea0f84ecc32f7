#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "adaptforce/contact_model.hpp"
#include "adaptforce/policy_solver.hpp"

namespace adaptforce {

/// One supervised pair: (reference, force, stiffness) -> Kp.
struct TrainingSample {
  double reference = 0.0;  // N
  double force = 0.0;      // N
  double stiffness = 0.0;  // N/m
  double kp_label = 0.0;
};

using Features = Eigen::Vector3d;

inline Features features_of(const TrainingSample& s) { return {s.reference, s.force, s.stiffness}; }

/// Per-feature standardization.
struct FeatureScaler {
  Features mean = Features::Zero();
  Features std = Features::Ones();

  static FeatureScaler fit(std::span<const TrainingSample> samples);
  Features transform(const Features& raw) const { return (raw - mean).cwiseQuotient(std); }
  Features inverse(const Features& scaled) const { return scaled.cwiseProduct(std) + mean; }
};

/// 3 -> 6 -> 3 -> 1, rectifier after every layer including the output.
struct MlpParams {
  Eigen::Matrix<double, 6, 3> w1 = Eigen::Matrix<double, 6, 3>::Zero();
  Eigen::Matrix<double, 6, 1> b1 = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 3, 6> w2 = Eigen::Matrix<double, 3, 6>::Zero();
  Eigen::Matrix<double, 3, 1> b2 = Eigen::Matrix<double, 3, 1>::Zero();
  Eigen::Matrix<double, 1, 3> w3 = Eigen::Matrix<double, 1, 3>::Zero();
  Eigen::Matrix<double, 1, 1> b3 = Eigen::Matrix<double, 1, 1>::Zero();

  static constexpr int kParamCount = 6 * 3 + 6 + 3 * 6 + 3 + 3 + 1;

  /// Flat view in the order w1, b1, w2, b2, w3, b3 (column-major within each).
  std::array<double, kParamCount> flatten() const;
  static MlpParams unflatten(const std::array<double, kParamCount>& flat);
  bool all_finite() const;
};

struct OutputBounds {
  double u_min = 0.0;
  double u_max = 1.0;
};

/// Network plus the preprocessing and clamp it was trained with.
struct AdaptationModel {
  MlpParams params;
  FeatureScaler scaler;
  OutputBounds bounds;
};

/// Pre-activations of every layer, used for kink checks and backprop.
struct ForwardTrace {
  Eigen::Matrix<double, 6, 1> z1, h1;
  Eigen::Matrix<double, 3, 1> z2, h2;
  double z3 = 0.0;
  double output = 0.0;
};

ForwardTrace forward_trace(const MlpParams& params, const Features& scaled);

/// Unclamped network output for already-scaled features.
double forward_raw(const MlpParams& params, const Features& scaled);

/// Inference path: scale, run the network, clamp to bounds. Throws
/// InputError on non-finite features.
double forward(const MlpParams& params, const FeatureScaler& scaler, const Features& features,
               const OutputBounds& bounds = {});
double forward(const AdaptationModel& model, const Features& features);

struct LossAndGradient {
  double mse = 0.0;
  MlpParams gradient;
};

/// Mean squared error over the batch and its exact gradient. The output
/// clamp is not part of this path. Rectifier derivative at 0 is taken as 0.
LossAndGradient loss_and_gradient(const MlpParams& params, std::span<const TrainingSample> batch,
                                  const FeatureScaler& scaler);

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-4;
  int batch_size = 64;
  int mini_batches_per_batch = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double validation_fraction = 0.1;
  double output_bias_init = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  AdaptationModel model;
  std::vector<double> loss_history;  // mean training MSE per epoch
  double validation_mse = 0.0;       // NaN when no samples were held out
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
};

/// He-initialized weights, zero hidden biases, positive output bias.
MlpParams initialize_params(std::uint64_t seed, double output_bias = 0.1);

/// Adam over mini-batches of batch_size / mini_batches_per_batch samples,
/// reshuffled every epoch from the seeded generator. Deterministic per seed.
TrainResult train(std::span<const TrainingSample> dataset, const TrainConfig& config,
                  const OutputBounds& bounds = {});

/// One sample per policy node: (reference, force(x), stiffness(x)) -> kp(x).
std::vector<TrainingSample> build_dataset(std::span<const PolicyTable> policies, const ContactModel& model);

void write_dataset_csv(const std::filesystem::path& path, std::span<const TrainingSample> samples);
std::vector<TrainingSample> read_dataset_csv(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const AdaptationModel& model);
AdaptationModel load_model(const std::filesystem::path& path);

}  // namespace adaptforce
