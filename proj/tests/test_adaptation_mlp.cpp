#include <cmath>
#include <filesystem>
#include <random>

#include "adaptforce/adaptation_mlp.hpp"
#include "adaptforce/csv.hpp"
#include "adaptforce/error.hpp"
#include "adaptforce/zones.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support/gradient_check.hpp"

using namespace adaptforce;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("adaptforce_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<TrainingSample> random_samples(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> r(4, 24), f(0, 25), s(100, 3000), kp(0, 1);
  std::vector<TrainingSample> out;
  for (int k = 0; k < n; ++k) out.push_back({r(rng), f(rng), s(rng), kp(rng)});
  return out;
}

// Smooth synthetic labels that a small network can fit.
std::vector<TrainingSample> smooth_samples(std::uint64_t seed, int n) {
  auto out = random_samples(seed, n);
  for (auto& s : out) s.kp_label = 0.2 + 0.5 * std::max(0.0, s.reference - s.force) / 24.0;
  return out;
}

double bisect_depth(const ContactModel& m, double force) {
  double lo = 0.0, hi = 0.05;
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    (force_at(m, mid) < force ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("zero network outputs zero") {
  MlpParams p;
  const FeatureScaler scaler;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 100);
  for (int k = 0; k < 100; ++k) CHECK(forward(p, scaler, Features(n(rng), n(rng), n(rng))) == 0.0);
}

TEST_CASE("inference output is clamped") {
  MlpParams p;
  p.b3(0, 0) = 7.0;
  CHECK(forward(p, FeatureScaler{}, Features(1, 2, 3)) == 1.0);
  CHECK(forward_raw(p, Features(1, 2, 3)) == 7.0);
  OutputBounds b{0.0, 0.25};
  CHECK(forward(p, FeatureScaler{}, Features(1, 2, 3), b) == 0.25);
  const auto trained = train(smooth_samples(4, 256), TrainConfig{.epochs = 3, .learning_rate = 1e-2});
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1e4);
  for (int k = 0; k < 500; ++k) {
    const double y = forward(trained.model, Features(n(rng), n(rng), n(rng)));
    CHECK(y >= 0.0);
    CHECK(y <= 1.0);
  }
  CHECK_THROWS_AS(forward(trained.model, Features(std::nan(""), 1, 1)), InputError);
  CHECK_THROWS_AS(forward(trained.model, Features(INFINITY, 1, 1)), InputError);
}

TEST_CASE("analytic gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    CAPTURE(seed);
    CHECK(support::gradient_draw(seed).worst_relative_error < 1e-4);
  }
}

TEST_CASE("duplicating the batch leaves loss and gradient unchanged") {
  const auto p = initialize_params(5, 0.5);
  auto batch = random_samples(6, 10);
  const auto scaler = FeatureScaler::fit(batch);
  const auto once = loss_and_gradient(p, batch, scaler);
  auto twice_batch = batch;
  twice_batch.insert(twice_batch.end(), batch.begin(), batch.end());
  const auto twice = loss_and_gradient(p, twice_batch, scaler);
  CHECK(twice.mse == doctest::Approx(once.mse).epsilon(1e-12));
  const auto g1 = once.gradient.flatten();
  const auto g2 = twice.gradient.flatten();
  for (std::size_t k = 0; k < g1.size(); ++k) CHECK(g2[k] == doctest::Approx(g1[k]).epsilon(1e-12).scale(1e-12));
  CHECK_THROWS_AS(loss_and_gradient(p, std::vector<TrainingSample>{}, scaler), InputError);
}

TEST_CASE("perfect fit gives zero loss and gradient") {
  const auto p = initialize_params(8, 0.5);
  auto batch = random_samples(2, 16);
  const auto scaler = FeatureScaler::fit(batch);
  for (auto& s : batch) s.kp_label = forward_raw(p, scaler.transform(features_of(s)));
  const auto lg = loss_and_gradient(p, batch, scaler);
  CHECK(lg.mse == 0.0);
  for (double g : lg.gradient.flatten()) CHECK(g == 0.0);
}

TEST_CASE("single sample overfits") {
  const std::vector<TrainingSample> one{{10.0, 4.0, 900.0, 0.37}};
  TrainConfig cfg;
  cfg.epochs = 3000;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 1;
  cfg.mini_batches_per_batch = 1;
  cfg.validation_fraction = 0.0;
  const auto r = train(one, cfg);
  CHECK(r.train_size == 1);
  CHECK(r.validation_size == 0);
  CHECK(std::isnan(r.validation_mse));
  CHECK(forward(r.model, features_of(one[0])) == doctest::Approx(0.37).epsilon(1e-3 / 0.37));
}

TEST_CASE("training bookkeeping and determinism") {
  const auto data = smooth_samples(12, 640);
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.learning_rate = 1e-3;
  cfg.seed = 99;
  const auto a = train(data, cfg);
  const auto b = train(data, cfg);
  CHECK(a.loss_history.size() == 7);
  CHECK(a.validation_size == 64);
  CHECK(a.train_size == 576);
  CHECK(a.model.params.flatten() == b.model.params.flatten());
  CHECK(a.loss_history == b.loss_history);
  cfg.seed = 100;
  CHECK(train(data, cfg).model.params.flatten() != a.model.params.flatten());

  CHECK_THROWS_AS(train(std::span(data).first(10), cfg), InputError);
  cfg.batch_size = 63;
  CHECK_THROWS_AS(train(data, cfg), InputError);
  cfg.batch_size = 64;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(data, cfg), InputError);
}

TEST_CASE("training reduces the loss") {
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.learning_rate = 1e-3;
  const auto r = train(smooth_samples(3, 2000), cfg);
  CHECK(r.loss_history.back() < 0.1 * r.loss_history.front());
  CHECK(r.model.params.all_finite());
}

TEST_CASE("scaler round trip") {
  const auto data = random_samples(21, 100);
  const auto scaler = FeatureScaler::fit(data);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1000);
  for (int k = 0; k < 200; ++k) {
    const Features x(n(rng), n(rng), n(rng));
    const Features back = scaler.inverse(scaler.transform(x));
    for (int i = 0; i < 3; ++i) CHECK(std::abs(back[i] - x[i]) <= 1e-12 * std::max(1.0, std::abs(x[i])));
  }
  const std::vector<TrainingSample> constant(5, TrainingSample{1, 2, 3, 0});
  CHECK(FeatureScaler::fit(constant).std == Features::Ones());
}

TEST_CASE("build_dataset") {
  const ContactModel m{2.0, -135.0, -2.0};
  PolicyTable t;
  t.reference = 8.0;
  for (int i = 0; i < 1001; ++i) {
    t.x_grid.push_back(0.02 * i / 1000);
    t.kp_values.push_back(i / 1000.0);
  }
  const std::vector<PolicyTable> one{t};
  const auto ds = build_dataset(one, m);
  CHECK(ds.size() == 1001);
  // Paper-scale cardinality: 3 zones x 41 references x 1001 nodes.
  std::size_t total = 0;
  std::vector<PolicyTable> many(41, t);
  for (int zone = 0; zone < 3; ++zone) total += build_dataset(many, m).size();
  CHECK(total == 123123);

  // Stiffness must be the derivative at the depth whose force matches.
  for (std::size_t k = 1; k < ds.size(); k += 37) {
    const double x = bisect_depth(m, ds[k].force);
    CHECK(ds[k].stiffness == doctest::Approx(stiffness_at(m, x)).epsilon(1e-9));
    CHECK(ds[k].reference == 8.0);
    CHECK(ds[k].kp_label == t.kp_values[k]);
  }
  CHECK_THROWS_AS(build_dataset(std::vector<PolicyTable>{}, m), InputError);
}

TEST_CASE("dataset CSV round trip") {
  const auto dir = temp_dir("dataset");
  const auto data = random_samples(1, 50);
  write_dataset_csv(dir / "d.csv", data);
  CHECK(csv::read_text(dir / "d.csv").rfind("r_n,f_n,dfdx_n_per_m,kp\n", 0) == 0);
  const auto back = read_dataset_csv(dir / "d.csv");
  REQUIRE(back.size() == data.size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    CHECK(back[k].reference == data[k].reference);
    CHECK(back[k].force == data[k].force);
    CHECK(back[k].stiffness == data[k].stiffness);
    CHECK(back[k].kp_label == data[k].kp_label);
  }
}

TEST_CASE("model JSON round trip and validation") {
  const auto dir = temp_dir("model");
  const auto trained = train(smooth_samples(7, 300), TrainConfig{.epochs = 5, .learning_rate = 1e-3});
  save_model(dir / "m.json", trained.model);
  const auto loaded = load_model(dir / "m.json");
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> r(0, 30), f(0, 30), s(0, 4000);
  for (int k = 0; k < 100; ++k) {
    const Features x(r(rng), f(rng), s(rng));
    CHECK(forward(loaded, x) == forward(trained.model, x));
  }

  auto text = csv::read_text(dir / "m.json");
  nlohmann::json j = nlohmann::json::parse(text);
  j["layers"][1]["w"].erase(0);
  csv::write_text(dir / "shape.json", j.dump());
  try {
    load_model(dir / "shape.json");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string what = e.what();
    CHECK(what.find("layer 2") != std::string::npos);
    CHECK(what.find("shape") != std::string::npos);
  }

  j = nlohmann::json::parse(text);
  j["layers"][0]["b"][2] = "NaN";
  csv::write_text(dir / "nan_str.json", j.dump());
  CHECK_THROWS_AS(load_model(dir / "nan_str.json"), ParseError);
  // JSON has no NaN literal; a bare token is malformed input.
  auto bare = text;
  const auto pos = bare.find("\"b\": [") + 6;
  bare.insert(pos, "NaN, ");
  csv::write_text(dir / "nan_bare.json", bare);
  CHECK_THROWS_AS(load_model(dir / "nan_bare.json"), ParseError);
  csv::write_text(dir / "garbage.json", "{not json");
  CHECK_THROWS_AS(load_model(dir / "garbage.json"), ParseError);
}

TEST_CASE("trained module flattens with the reference at shallow depth") {
  // Paper grid on the three training zones, default training settings.
  std::vector<TrainingSample> data;
  for (const auto& z : training_zones(bundled_zones())) {
    const auto tables = solve_policy_sweep(z.model, default_references(), GridSpec{}, CostParams{});
    const auto part = build_dataset(tables, z.model);
    data.insert(data.end(), part.begin(), part.end());
  }
  CHECK(data.size() == 123123);
  TrainConfig cfg;
  cfg.seed = 1;
  const auto r = train(data, cfg);
  CHECK(r.loss_history.size() == 200);
  CHECK(r.loss_history.back() < 0.1 * r.loss_history.front());

  for (const auto& z : training_zones(bundled_zones())) {
    CAPTURE(z.name);
    for (double x : {0.001, 0.002, 0.004}) {
      CAPTURE(x);
      const double f = force_at(z.model, x);
      const double s = stiffness_at(z.model, x);
      int inversions = 0;
      double prev = forward(r.model, Features(5.0, f, s));
      for (double ref : {10.0, 15.0, 20.0}) {
        const double kp = forward(r.model, Features(ref, f, s));
        CHECK(kp >= 0.0);
        CHECK(kp <= 1.0);
        inversions += kp > prev ? 1 : 0;
        prev = kp;
      }
      CHECK(inversions <= 1);
      CHECK(forward(r.model, Features(5.0, f, s)) >= forward(r.model, Features(20.0, f, s)));
    }
  }
}
