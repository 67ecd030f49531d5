#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "core/neurons.hpp"
#include "core/tensor.hpp"

namespace bispike {

// Per-site, per-timestep spike amplitudes. Filled once from the first batch,
// then frozen; any later mutation is a hard error so training can never move
// the thresholds silently.
class AlphaTable {
 public:
  bool has(const std::string& site, int t) const;
  float at(const std::string& site, int t) const;          // throws if missing
  void set(const std::string& site, int t, float alpha);   // throws if frozen
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }
  size_t site_count() const { return entries_.size(); }

  const std::map<std::string, std::vector<float>>& entries() const { return entries_; }
  // Checkpoint restore path: replaces contents wholesale, leaves table frozen.
  static AlphaTable restore(std::map<std::string, std::vector<float>> entries);

 private:
  std::map<std::string, std::vector<float>> entries_;  // site -> alpha per t
  bool frozen_ = false;
};

// alpha = (k / n) * sum_i |m_i| over the calibration tensor.
float calibrate_alpha(const Tensor& m, float k);

enum class CalibrationDist { gaussian, laplace };

// Closed forms of E[|m|] * k: Gaussian(0, sigma) -> sqrt(2/pi) sigma k;
// Laplace(0, b) -> b k.
double expected_alpha_closed_form(CalibrationDist dist, double scale, double k);

struct FiringStats {
  double r = 0.0;        // fraction of nonzero codes
  double r_plus = 0.0;   // fraction of +1 codes
  double r_minus = 0.0;  // fraction of -1 codes
  int64_t n = 0;
};

FiringStats measure_firing_rate(const SpikeCode& s);

// Per-step information content in bits at firing rate r:
// first = binary {0,1} code entropy, second = ternary {-1,0,+1} code entropy
// with the fired mass split evenly. Their gap is exactly r bits.
std::pair<double, double> spike_entropy(double r);

}  // namespace bispike
