#include "core/analysis.hpp"

#include "core/common.hpp"

namespace bispike {

std::pair<double, double> jacobian_stats_empirical(const Tensor& jac_diag) {
  if (jac_diag.numel() == 0)
    throw StateError("jacobian_stats_empirical: empty sample");
  double s1 = 0.0, s2 = 0.0;
  for (int64_t i = 0; i < jac_diag.numel(); ++i) {
    double z = jac_diag.at(i);
    s1 += z;
    s2 += z * z;
  }
  double n = static_cast<double>(jac_diag.numel());
  double phi = s1 / n;
  return {phi, s2 / n - phi * phi};
}

std::pair<double, double> relu_isometry_analytic(double p) {
  if (!(p >= 0.0 && p <= 1.0))
    throw ConfigError("relu_isometry_analytic: p must lie in [0,1]");
  return {p, p - p * p};
}

std::pair<double, double> spike_isometry_analytic(double r) {
  if (!(r >= 0.0 && r <= 1.0))
    throw ConfigError("spike_isometry_analytic: r must lie in [0,1]");
  return {1.0 - r, r - r * r};
}

Theorem1Result theorem1_compare(double p_relu, double r_spike) {
  auto [phi_relu, varphi_relu] = relu_isometry_analytic(p_relu);
  auto [phi_spike, varphi_spike] = spike_isometry_analytic(r_spike);
  Theorem1Result res;
  res.phi_margin = phi_spike - phi_relu;
  res.varphi_margin = varphi_relu - varphi_spike;
  // Strictly closer to the isometry target (phi -> 1 from below, varphi -> 0).
  res.holds = (1.0 - phi_spike < 1.0 - phi_relu) && (varphi_spike < varphi_relu);
  return res;
}

double energy_ac_pj(Precision p) { return p == Precision::fp32 ? 0.9 : 0.4; }
double energy_mac_pj(Precision p) { return p == Precision::fp32 ? 4.6 : 1.5; }

double energy_linear(int64_t m, int64_t n, EnergyMode mode, Precision prec, int T, double r) {
  if (m <= 0 || n <= 0) throw ConfigError("energy_linear: dims must be positive");
  if (mode == EnergyMode::ann)
    return static_cast<double>(m) * static_cast<double>(n) * energy_mac_pj(prec);
  if (T < 1) throw ConfigError("energy_linear: snn mode requires T >= 1");
  if (!(r >= 0.0 && r <= 1.0))
    throw ConfigError("energy_linear: snn mode requires firing rate in [0,1]");
  return static_cast<double>(m) * static_cast<double>(n) * energy_ac_pj(prec) *
         static_cast<double>(T) * r;
}

double LayerEnergy::energy_pj(Precision p) const {
  if (spike)
    return static_cast<double>(m * (calls / T)) *
           energy_linear(k, n, EnergyMode::snn, p, T, rate());
  return static_cast<double>(m * calls) * energy_linear(k, n, EnergyMode::ann, p);
}

double LayerEnergy::ann_equiv_pj(Precision p) const {
  return static_cast<double>(m * (calls / T)) * energy_linear(k, n, EnergyMode::ann, p);
}

double EnergyProfile::total_pj(Precision p) const {
  double e = 0.0;
  for (const auto& l : layers) e += l.energy_pj(p);
  return e;
}

double EnergyProfile::ann_equiv_pj(Precision p) const {
  double e = 0.0;
  for (const auto& l : layers) e += l.ann_equiv_pj(p);
  return e;
}

}  // namespace bispike
