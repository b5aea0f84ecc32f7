#include <cmath>

#include "adaptforce/contact_model.hpp"
#include "adaptforce/error.hpp"
#include "adaptforce/stiffness_detector.hpp"
#include "doctest.h"

using namespace adaptforce;

TEST_CASE("secant from two readings") {
  StiffnessDetector det;
  CHECK_FALSE(det.update(2.0, 0.0).has_value());  // no previous force yet
  const auto s = det.update(3.0, 0.001);
  REQUIRE(s.has_value());
  CHECK(*s == doctest::Approx(1000.0));
}

TEST_CASE("linear law gives its slope exactly") {
  StiffnessDetector det;
  double x = 0.0;
  det.update(500.0 * x, 0.0);
  for (int k = 0; k < 20; ++k) {
    const double dx = 1e-4 * (1 + k % 3);
    x += dx;
    const auto s = det.update(500.0 * x, dx);
    REQUIRE(s.has_value());
    CHECK(*s == doctest::Approx(500.0).epsilon(1e-9));
  }
}

TEST_CASE("tiny displacement holds the last estimate") {
  StiffnessDetector det;
  det.update(1.0, 0.0);
  det.update(2.0, 0.002);  // 500 N/m
  auto s = det.update(9.0, 0.0);
  REQUIRE(s.has_value());
  CHECK(*s == doctest::Approx(500.0));
  CHECK(std::isfinite(*s));
  s = det.update(9.5, 5e-8);
  CHECK(*s == doctest::Approx(500.0));
  // The held reading still becomes the new baseline.
  s = det.update(10.5, 0.001);
  CHECK(*s == doctest::Approx(1000.0));
}

TEST_CASE("no estimate before a valid secant") {
  StiffnessDetector det;
  CHECK_FALSE(det.update(1.0, 0.0).has_value());
  CHECK_FALSE(det.update(1.0, 0.0).has_value());
  CHECK_FALSE(det.stiffness().has_value());
}

TEST_CASE("floor and smoothing") {
  StiffnessDetectorConfig cfg;
  cfg.floor = 10.0;
  StiffnessDetector det(cfg);
  det.update(5.0, 0.0);
  CHECK(*det.update(4.0, 0.001) == doctest::Approx(10.0));

  cfg.floor.reset();
  StiffnessDetector raw(cfg);
  raw.update(5.0, 0.0);
  CHECK(*raw.update(4.0, 0.001) == doctest::Approx(-1000.0));

  cfg.smoothing = 0.5;
  StiffnessDetector smooth(cfg);
  smooth.update(0.0, 0.0);
  CHECK(*smooth.update(1.0, 0.001) == doctest::Approx(1000.0));
  CHECK(*smooth.update(4.0, 0.001) == doctest::Approx(0.5 * 3000.0 + 0.5 * 1000.0));

  cfg.smoothing = 0.0;
  CHECK_THROWS_AS(StiffnessDetector{cfg}, InputError);
  cfg.smoothing = 1.0;
  cfg.min_displacement = 0.0;
  CHECK_THROWS_AS(StiffnessDetector{cfg}, InputError);
  StiffnessDetector d;
  CHECK_THROWS_AS(d.update(std::nan(""), 0.001), InputError);
}

TEST_CASE("secant error shrinks linearly with the step") {
  const ContactModel m{2.0, -135.0, -2.0};
  const double x0 = 0.008;
  auto err = [&](double h) {
    StiffnessDetector det;
    det.update(force_at(m, x0), 0.0);
    const double s = *det.update(force_at(m, x0 + h), h);
    return std::abs(s - stiffness_at(m, x0 + h));
  };
  for (double h : {1e-4, 5e-5, 2.5e-5}) {
    const double order = std::log2(err(h) / err(h / 2));
    CHECK(order == doctest::Approx(1.0).epsilon(0.05));
  }
}

TEST_CASE("reset clears everything") {
  StiffnessDetector det;
  det.update(0.0, 0.0);
  det.update(1.0, 0.001);
  det.reset();
  CHECK_FALSE(det.stiffness().has_value());
  CHECK_FALSE(det.last_force().has_value());
}
