#include <cmath>
#include <filesystem>
#include <random>

#include "adaptforce/contact_model.hpp"
#include "adaptforce/csv.hpp"
#include "adaptforce/error.hpp"
#include "adaptforce/zones.hpp"
#include "doctest.h"

using namespace adaptforce;

namespace {

const ContactModel kUnit{2.0, -100.0, -2.0};

std::vector<DepthForceSample> sample_law(const ContactModel& m, int n, double x_max) {
  std::vector<DepthForceSample> out;
  for (int i = 0; i < n; ++i) {
    const double x = x_max * i / (n - 1);
    out.push_back({x, force_at(m, x)});
  }
  return out;
}

double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("adaptforce_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("force_at matches analytic values") {
  CHECK(force_at(kUnit, 0.0) == doctest::Approx(0.0));
  CHECK(force_at(kUnit, 0.01) == doctest::Approx(2.0 * (std::exp(1.0) - 1.0)).epsilon(1e-12));
  CHECK(force_at(kUnit, 0.01) == doctest::Approx(3.43656).epsilon(1e-6));
  CHECK(force_at({5.0, -200.0, -5.0}, 0.02) == doctest::Approx(5.0 * (std::exp(4.0) - 1.0)).epsilon(1e-12));
  CHECK(force_at({5.0, -200.0, -5.0}, 0.02) == doctest::Approx(268.0).epsilon(1e-3));
  CHECK_THROWS_AS(force_at(kUnit, std::nan("")), InputError);
  CHECK_THROWS_AS(force_at(kUnit, INFINITY), InputError);
  CHECK_THROWS_AS(force_at(kUnit, -1e-3), InputError);
}

TEST_CASE("stiffness_at is the analytic derivative") {
  CHECK(stiffness_at(kUnit, 0.0) == doctest::Approx(200.0));
  CHECK(stiffness_at(kUnit, 0.01) == doctest::Approx(200.0 * std::exp(1.0)).epsilon(1e-12));
  CHECK_THROWS_AS(stiffness_at(kUnit, std::nan("")), InputError);

  // Central finite difference of force_at, the independent route.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> a_dist(0.5, 5.0), b_dist(-250.0, -20.0), x_dist(0.001, 0.019);
  for (int k = 0; k < 200; ++k) {
    const ContactModel m{a_dist(rng), b_dist(rng), 0.0};
    for (double x : {0.005, x_dist(rng)}) {
      const double h = 1e-6;
      const double fd = (force_at(m, x + h) - force_at(m, x - h)) / (2 * h);
      CHECK(rel(stiffness_at(m, x), fd) < 1e-6);
    }
  }
}

TEST_CASE("bundled zones are increasing and convex on the operating range") {
  for (const auto& z : bundled_zones()) {
    CAPTURE(z.name);
    CHECK_NOTHROW(validate_contact_model(z.model, 0.02));
    double prev = force_at(z.model, 0.0);
    for (int i = 1; i <= 2000; ++i) {
      const double f = force_at(z.model, 0.02 * i / 2000);
      CHECK(f > prev);
      prev = f;
    }
    CHECK(prev >= 24.0);
    CHECK(prev <= 30.0);
  }
  CHECK_THROWS_AS(validate_contact_model({-1.0, -100.0, 1.0}, 0.02), InputError);
  CHECK_THROWS_AS(validate_contact_model({1.0, 100.0, -1.0}, 0.02), InputError);
  CHECK_THROWS_AS(validate_contact_model({2.0, -100.0, -1.0}, 0.02), InputError);
}

TEST_CASE("fit_exponential recovers noiseless parameters") {
  const auto samples = sample_law(kUnit, 50, 0.02);
  const auto report = fit_exponential(samples);
  CHECK(report.converged);
  CHECK(report.iterations <= 200);
  CHECK(rel(report.model.a, 2.0) < 1e-6);
  CHECK(rel(report.model.b, -100.0) < 1e-6);
  CHECK(rel(report.model.c, -2.0) < 1e-6);
  CHECK(report.rms_residual < 1e-9);

  for (const auto& z : bundled_zones()) {
    CAPTURE(z.name);
    const auto r = fit_exponential(sample_law(z.model, 50, 0.02));
    CHECK(rel(r.model.a, z.model.a) < 1e-6);
    CHECK(rel(r.model.b, z.model.b) < 1e-6);
    CHECK(rel(r.model.c, z.model.c) < 1e-6);
  }
}

TEST_CASE("fit_exponential approaches the linear limit") {
  std::vector<DepthForceSample> samples;
  for (int i = 0; i < 40; ++i) {
    const double x = 0.02 * i / 39;
    samples.push_back({x, 500.0 * x});
  }
  const auto report = fit_exponential(samples);
  CHECK(report.rms_residual < 1e-3);
  CHECK(report.model.a > 0.0);
  CHECK(report.model.b < 0.0);
  CHECK(std::abs(report.model.b) < 1.0);
  for (const auto& s : samples) CHECK(force_at(report.model, s.depth) == doctest::Approx(s.force).epsilon(1e-3));
}

TEST_CASE("fit_exponential under sigma=0.1 N noise, Monte Carlo over 20 seeds") {
  double sum_a = 0, sum_b = 0, sum_c = 0;
  const int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::normal_distribution<double> noise(0.0, 0.1);
    auto samples = sample_law(kUnit, 50, 0.02);
    for (auto& s : samples) s.force += noise(rng);
    const auto r = fit_exponential(samples);
    CHECK(r.rms_residual <= 0.2);
    sum_a += r.model.a;
    sum_b += r.model.b;
    sum_c += r.model.c;
  }
  CHECK(rel(sum_a / seeds, 2.0) < 0.10);
  CHECK(rel(sum_b / seeds, -100.0) < 0.10);
  CHECK(rel(sum_c / seeds, -2.0) < 0.10);
}

TEST_CASE("fit_exponential input errors") {
  std::vector<DepthForceSample> three = {{0, 0}, {0.01, 1}, {0.02, 3}};
  CHECK_THROWS_AS(fit_exponential(three), InputError);
  std::vector<DepthForceSample> flat = {{0.01, 0}, {0.01, 1}, {0.01, 3}, {0.01, 2}};
  CHECK_THROWS_AS(fit_exponential(flat), InputError);
  std::vector<DepthForceSample> nan = {{0, 0}, {0.01, 1}, {0.02, std::nan("")}, {0.03, 2}};
  CHECK_THROWS_AS(fit_exponential(nan), InputError);

  // A sweep cap of 1 cannot converge; that is reported, not thrown.
  FitSettings tight;
  tight.max_iterations = 1;
  const auto r = fit_exponential(sample_law({1.0, -150.0, -1.0}, 30, 0.02), tight);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 1);
}

TEST_CASE("generate_zone_data without noise samples the law exactly") {
  ZoneDataSpec spec;
  spec.step = 0.001;
  spec.max_force = 5.0;
  spec.noise_sigma = 0.0;
  spec.repetitions = 1;
  const auto data = generate_zone_data(kUnit, spec);
  REQUIRE(data.size() == 14);  // f(0.013) = 2(e^1.3 - 1) = 5.34 is the first reading above 5 N
  for (std::size_t k = 0; k < data.size(); ++k) {
    CHECK(data[k].depth == static_cast<double>(k) * 0.001);
    CHECK(data[k].force == force_at(kUnit, static_cast<double>(k) * 0.001));
  }
  CHECK(data.back().force > 5.0);
  CHECK(data[data.size() - 2].force <= 5.0);

  spec.step = 0.0;
  CHECK_THROWS_AS(generate_zone_data(kUnit, spec), InputError);
  spec.step = -1e-3;
  CHECK_THROWS_AS(generate_zone_data(kUnit, spec), InputError);
}

TEST_CASE("generate_zone_data averaging shrinks noise by sqrt(repetitions)") {
  ZoneDataSpec spec;
  spec.step = 0.002;
  spec.max_force = 100.0;
  spec.noise_sigma = 0.1;
  spec.repetitions = 10;
  // Residuals at a fixed depth across 60 seeds estimate the standard error.
  const std::size_t probe = 3;
  double sum = 0.0, sum_sq = 0.0;
  const int seeds = 60;
  for (int seed = 0; seed < seeds; ++seed) {
    spec.seed = static_cast<std::uint64_t>(seed);
    const auto data = generate_zone_data(kUnit, spec);
    REQUIRE(data.size() > probe);
    const double r = data[probe].force - force_at(kUnit, data[probe].depth);
    sum += r;
    sum_sq += r * r;
  }
  const double mean = sum / seeds;
  const double sd = std::sqrt(sum_sq / seeds - mean * mean);
  const double expected = 0.1 / std::sqrt(10.0);
  CHECK(sd == doctest::Approx(expected).epsilon(0.25));
  CHECK(std::abs(mean) < 4.0 * expected / std::sqrt(static_cast<double>(seeds)));
}

TEST_CASE("generate_zone_data is deterministic per seed") {
  ZoneDataSpec spec;
  spec.step = 0.001;
  spec.noise_sigma = 0.1;
  spec.repetitions = 10;
  spec.max_force = 10.0;
  spec.seed = 5;
  const auto a = generate_zone_data(kUnit, spec);
  const auto b = generate_zone_data(kUnit, spec);
  spec.seed = 6;
  const auto c = generate_zone_data(kUnit, spec);
  REQUIRE(a.size() == b.size());
  bool any_diff = a.size() != c.size();
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].force == b[k].force);
    if (k < c.size() && a[k].force != c[k].force) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("zone CSV and model JSON files") {
  const auto dir = temp_dir("contact");
  ZoneDataSpec spec;
  spec.noise_sigma = 0.1;
  spec.seed = 3;
  const auto data = generate_zone_data(kUnit, spec);
  write_zone_csv(dir / "z.csv", data);
  CHECK(csv::read_text(dir / "z.csv").rfind("depth_m,force_n\n", 0) == 0);
  const auto back = read_zone_csv(dir / "z.csv");
  REQUIRE(back.size() == data.size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    CHECK(back[k].depth == data[k].depth);
    CHECK(back[k].force == data[k].force);
  }

  csv::write_text(dir / "bad.csv", "depth_m,force_n\n0,0\nabc,1.0\n");
  try {
    read_zone_csv(dir / "bad.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
  csv::write_text(dir / "hdr.csv", "x,y\n0,0\n");
  CHECK_THROWS_AS(read_zone_csv(dir / "hdr.csv"), ParseError);

  const ContactModel m{1.2345678901234567, -123.456, -1.2345678901234567};
  save_contact_model(dir / "m.json", m);
  CHECK(load_contact_model(dir / "m.json") == m);
  csv::write_text(dir / "broken.json", R"({"a": 1, "b": "x", "c": 0})");
  CHECK_THROWS_AS(load_contact_model(dir / "broken.json"), ParseError);
}
