#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/calibration.hpp"
#include "core/common.hpp"

using namespace bispike;

TEST_CASE("alpha is k times the mean absolute potential") {
  Tensor m = Tensor::from({4}, {1.0f, -1.0f, 2.0f, -2.0f});
  CHECK(calibrate_alpha(m, 2.0f) == 3.0f);
  CHECK(calibrate_alpha(m, 1.0f) == 1.5f);
  CHECK_THROWS_AS(calibrate_alpha(Tensor({4}), 2.0f), ConfigError);  // all zero
  CHECK_THROWS_AS(calibrate_alpha(m, 0.0f), ConfigError);
  CHECK_THROWS_AS(calibrate_alpha(Tensor({0}), 2.0f), ConfigError);
}

TEST_CASE("closed forms for the two calibration families") {
  CHECK(expected_alpha_closed_form(CalibrationDist::gaussian, 1.0, 1.0) ==
        doctest::Approx(std::sqrt(2.0 / M_PI)).epsilon(1e-12));
  CHECK(expected_alpha_closed_form(CalibrationDist::gaussian, 2.0, 3.0) ==
        doctest::Approx(6.0 * std::sqrt(2.0 / M_PI)).epsilon(1e-12));
  CHECK(expected_alpha_closed_form(CalibrationDist::laplace, 0.7, 2.0) ==
        doctest::Approx(1.4).epsilon(1e-12));
}

TEST_CASE("alpha table: fill, freeze, restore") {
  AlphaTable t;
  CHECK_FALSE(t.has("a", 0));
  t.set("a", 0, 1.5f);
  t.set("a", 1, 2.5f);
  t.set("b", 0, 0.5f);
  CHECK(t.has("a", 1));
  CHECK(t.at("a", 1) == 2.5f);
  CHECK(t.site_count() == 2);
  CHECK_THROWS_AS(t.at("c", 0), StateError);
  CHECK_THROWS_AS(t.at("a", 2), StateError);
  CHECK_FALSE(t.frozen());
  t.freeze();
  CHECK(t.frozen());
  CHECK_THROWS_AS(t.set("a", 0, 9.0f), StateError);
  CHECK_THROWS_AS(t.set("new", 0, 9.0f), StateError);

  AlphaTable r = AlphaTable::restore(t.entries());
  CHECK(r.frozen());
  CHECK(r.at("b", 0) == 0.5f);
}

TEST_CASE("firing rate counter splits signs") {
  SpikeCode s;
  s.codes = Tensor::from({8}, {1, -1, 0, 0, 1, 1, 0, -1});
  FiringStats f = measure_firing_rate(s);
  CHECK(f.n == 8);
  CHECK(f.r == doctest::Approx(5.0 / 8.0));
  CHECK(f.r_plus == doctest::Approx(3.0 / 8.0));
  CHECK(f.r_minus == doctest::Approx(2.0 / 8.0));
}

TEST_CASE("entropy pair at exact rates") {
  auto [u0, b0] = spike_entropy(0.0);
  CHECK(u0 == 0.0);
  CHECK(b0 == 0.0);
  auto [u5, b5] = spike_entropy(0.5);
  CHECK(u5 == 1.0);
  CHECK(b5 == 1.5);
  auto [u1, b1] = spike_entropy(1.0);
  CHECK(u1 == 0.0);
  CHECK(b1 == 1.0);
  CHECK_THROWS_AS(spike_entropy(1.5), ConfigError);
  CHECK_THROWS_AS(spike_entropy(-0.1), ConfigError);
}

TEST_CASE("ternary codes carry exactly r extra bits") {
  for (int i = 0; i <= 100; ++i) {
    double r = i / 100.0;
    auto [hu, hb] = spike_entropy(r);
    CHECK(hb - hu == doctest::Approx(r).epsilon(1e-12));
  }
}
