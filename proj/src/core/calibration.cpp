#include "core/calibration.hpp"

#include <cmath>

#include "core/common.hpp"

namespace bispike {

bool AlphaTable::has(const std::string& site, int t) const {
  auto it = entries_.find(site);
  return it != entries_.end() && t >= 0 && t < static_cast<int>(it->second.size()) &&
         it->second[t] > 0.0f;
}

float AlphaTable::at(const std::string& site, int t) const {
  if (!has(site, t))
    throw StateError("alpha table: no amplitude for site '" + site + "' t=" +
                     std::to_string(t));
  return entries_.at(site)[t];
}

void AlphaTable::set(const std::string& site, int t, float alpha) {
  if (frozen_)
    throw StateError("alpha table is frozen; amplitudes are fixed after calibration");
  if (!(alpha > 0.0f))
    throw StateError("alpha table: non-positive amplitude for site '" + site + "'");
  auto& v = entries_[site];
  if (t >= static_cast<int>(v.size())) v.resize(t + 1, 0.0f);
  v[t] = alpha;
}

AlphaTable AlphaTable::restore(std::map<std::string, std::vector<float>> entries) {
  AlphaTable tbl;
  tbl.entries_ = std::move(entries);
  tbl.frozen_ = true;
  return tbl;
}

float calibrate_alpha(const Tensor& m, float k) {
  if (m.numel() == 0) throw ConfigError("calibrate_alpha: empty calibration tensor");
  if (!(k > 0.0f)) throw ConfigError("calibrate_alpha: k must be > 0");
  double acc = 0.0;
  for (int64_t i = 0; i < m.numel(); ++i) acc += std::fabs(static_cast<double>(m.at(i)));
  if (acc == 0.0)
    throw ConfigError(
        "calibrate_alpha: all-zero calibration batch; use a larger batch or nonzero init");
  return static_cast<float>(static_cast<double>(k) * acc /
                            static_cast<double>(m.numel()));
}

double expected_alpha_closed_form(CalibrationDist dist, double scale, double k) {
  if (!(scale > 0.0) || !(k > 0.0))
    throw ConfigError("expected_alpha_closed_form: scale and k must be > 0");
  switch (dist) {
    case CalibrationDist::gaussian:
      return std::sqrt(2.0 / M_PI) * scale * k;
    case CalibrationDist::laplace:
      return scale * k;
  }
  throw StateError("expected_alpha_closed_form: bad distribution");
}

FiringStats measure_firing_rate(const SpikeCode& s) {
  FiringStats st;
  st.n = s.codes.numel();
  if (st.n == 0) throw StateError("measure_firing_rate: empty spike code");
  int64_t plus = 0, minus = 0;
  for (int64_t i = 0; i < st.n; ++i) {
    float c = s.codes.at(i);
    if (c > 0.0f) ++plus;
    else if (c < 0.0f) ++minus;
  }
  st.r_plus = static_cast<double>(plus) / static_cast<double>(st.n);
  st.r_minus = static_cast<double>(minus) / static_cast<double>(st.n);
  st.r = st.r_plus + st.r_minus;
  return st;
}

std::pair<double, double> spike_entropy(double r) {
  if (!(r >= 0.0 && r <= 1.0))
    throw ConfigError("spike_entropy: rate must lie in [0,1], got " + std::to_string(r));
  auto plog2 = [](double p) { return p > 0.0 ? p * std::log2(p) : 0.0; };
  double h_uni = -plog2(r) - plog2(1.0 - r);
  double h_bi = -2.0 * plog2(r / 2.0) - plog2(1.0 - r);
  return {h_uni, h_bi};
}

}  // namespace bispike
