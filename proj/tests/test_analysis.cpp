#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/analysis.hpp"
#include "core/common.hpp"

using namespace bispike;

TEST_CASE("jacobian sample moments") {
  Tensor j = Tensor::from({4}, {1.0f, 1.0f, 0.0f, 1.0f});
  auto [phi, varphi] = jacobian_stats_empirical(j);
  CHECK(phi == 0.75);
  CHECK(varphi == 0.1875);
  CHECK_THROWS_AS(jacobian_stats_empirical(Tensor({0})), StateError);
}

TEST_CASE("analytic isometry moments") {
  for (double p : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    auto [phi_r, var_r] = relu_isometry_analytic(p);
    CHECK(phi_r == p);
    CHECK(var_r == p - p * p);
    auto [phi_s, var_s] = spike_isometry_analytic(p);
    CHECK(phi_s == 1.0 - p);
    CHECK(var_s == p - p * p);
  }
  CHECK_THROWS_AS(relu_isometry_analytic(-0.1), ConfigError);
  CHECK_THROWS_AS(relu_isometry_analytic(1.1), ConfigError);
  CHECK_THROWS_AS(spike_isometry_analytic(2.0), ConfigError);
}

TEST_CASE("spike beats relu on both moments below half rate") {
  Theorem1Result r = theorem1_compare(0.5, 0.25);
  CHECK(r.holds);
  CHECK(r.phi_margin == doctest::Approx(0.25));
  CHECK(r.varphi_margin == doctest::Approx(0.0625));

  CHECK(theorem1_compare(0.5, 0.45).holds);
  CHECK_FALSE(theorem1_compare(0.5, 0.5).holds);   // ties are not wins
  CHECK_FALSE(theorem1_compare(0.2, 0.9).holds);   // saturated encoder loses phi
}

TEST_CASE("per-op energy constants") {
  CHECK(energy_ac_pj(Precision::fp32) == 0.9);
  CHECK(energy_mac_pj(Precision::fp32) == 4.6);
  CHECK(energy_ac_pj(Precision::fp16) == 0.4);
  CHECK(energy_mac_pj(Precision::fp16) == 1.5);
}

TEST_CASE("linear layer energy") {
  CHECK(energy_linear(128, 256, EnergyMode::ann, Precision::fp32) == 150732.8);
  CHECK(energy_linear(128, 256, EnergyMode::snn, Precision::fp32, 4, 0.25) == 29491.2);
  CHECK(energy_linear(128, 256, EnergyMode::snn, Precision::fp16, 4, 0.25) ==
        128.0 * 256.0 * 0.4 * 4.0 * 0.25);

  SUBCASE("T scales linearly, silence costs nothing") {
    double one = energy_linear(32, 64, EnergyMode::snn, Precision::fp32, 1, 0.5);
    CHECK(energy_linear(32, 64, EnergyMode::snn, Precision::fp32, 2, 0.5) == 2.0 * one);
    CHECK(energy_linear(32, 64, EnergyMode::snn, Precision::fp32, 3, 0.0) == 0.0);
  }

  SUBCASE("rejects bad arguments") {
    CHECK_THROWS_AS(energy_linear(0, 4, EnergyMode::ann, Precision::fp32), ConfigError);
    CHECK_THROWS_AS(energy_linear(4, -1, EnergyMode::ann, Precision::fp32), ConfigError);
    CHECK_THROWS_AS(energy_linear(4, 4, EnergyMode::snn, Precision::fp32), ConfigError);
    CHECK_THROWS_AS(energy_linear(4, 4, EnergyMode::snn, Precision::fp32, 2, 1.5),
                    ConfigError);
    CHECK_THROWS_AS(energy_linear(4, 4, EnergyMode::snn, Precision::fp32, 2, -0.5),
                    ConfigError);
  }
}

TEST_CASE("layer energy recomposes from its counters") {
  LayerEnergy sp;
  sp.label = "ff1";
  sp.site = "b0.ff_in";
  sp.spike = true;
  sp.m = 8;
  sp.k = 16;
  sp.n = 32;
  sp.calls = 6;
  sp.T = 2;
  sp.spike_slots = 100;
  sp.spike_fired = 25;
  CHECK(sp.rate() == 0.25);
  for (Precision p : {Precision::fp32, Precision::fp16}) {
    CHECK(sp.energy_pj(p) ==
          24.0 * energy_linear(16, 32, EnergyMode::snn, p, 2, 0.25));
    CHECK(sp.ann_equiv_pj(p) == 24.0 * energy_linear(16, 32, EnergyMode::ann, p));
  }

  LayerEnergy de;
  de.label = "head";
  de.m = 4;
  de.k = 8;
  de.n = 16;
  de.calls = 10;
  de.T = 1;
  CHECK(de.rate() == 0.0);
  CHECK(de.energy_pj(Precision::fp32) ==
        40.0 * energy_linear(8, 16, EnergyMode::ann, Precision::fp32));
  CHECK(de.energy_pj(Precision::fp32) == de.ann_equiv_pj(Precision::fp32));

  EnergyProfile prof;
  prof.layers = {sp, de};
  CHECK(prof.total_pj(Precision::fp32) ==
        sp.energy_pj(Precision::fp32) + de.energy_pj(Precision::fp32));
  CHECK(prof.ann_equiv_pj(Precision::fp16) ==
        sp.ann_equiv_pj(Precision::fp16) + de.ann_equiv_pj(Precision::fp16));
}
