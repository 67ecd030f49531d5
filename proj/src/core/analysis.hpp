#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace bispike {

// --- dynamical isometry diagnostics -------------------------------------
// phi = E[z], varphi = Var[z] of the squared input-output Jacobian spectrum
// proxy z (diagonal entries of the elementwise Jacobian, squared support for
// indicator-style gradients).

// Sample moments of the Jacobian diagonal: (mean, mean of squares - mean^2).
std::pair<double, double> jacobian_stats_empirical(const Tensor& jac_diag);

// ReLU at P(x > 0) = p: (phi, varphi) = (p, p - p^2).
std::pair<double, double> relu_isometry_analytic(double p);
// Expectation-gradient spike encoder at firing rate r: (1 - r, r - r^2).
std::pair<double, double> spike_isometry_analytic(double r);

struct Theorem1Result {
  bool holds = false;      // spike strictly better on both moments
  double phi_margin = 0.0;     // phi_spike - phi_relu
  double varphi_margin = 0.0;  // varphi_relu - varphi_spike
};

// Strict comparison: phi closer to 1 from below and varphi closer to 0.
Theorem1Result theorem1_compare(double p_relu, double r_spike);

// --- energy model --------------------------------------------------------

enum class EnergyMode { ann, snn };
enum class Precision { fp32, fp16 };

// pJ per op (45nm): fp32 add 0.9, fp32 mac 4.6, fp16 add 0.4, fp16 mac 1.5.
double energy_ac_pj(Precision p);
double energy_mac_pj(Precision p);

// One m x n linear layer, per input token:
//   ann: m * n * E_MAC
//   snn: m * n * E_AC * T * r   (requires T >= 1 and r in [0,1])
double energy_linear(int64_t m, int64_t n, EnergyMode mode, Precision prec, int T = -1,
                     double r = -1.0);

// One audited product family (same label, uniform per-call dims). `calls`
// counts every observed product, timesteps included; a spike layer's rate is
// realized fired slots over the spiking operand's total slots.
struct LayerEnergy {
  std::string label;
  std::string site;  // encoder feeding this product, "" for real-valued
  bool spike = false;
  int64_t m = 0, k = 0, n = 0;  // per-call product dims (m x k) @ (k x n)
  int64_t calls = 0;
  int T = 1;
  int64_t macs = 0;  // multiply-accumulates performed
  int64_t acs = 0;   // pure accumulates performed
  int64_t spike_slots = 0;
  int64_t spike_fired = 0;

  double rate() const {
    return spike_slots ? static_cast<double>(spike_fired) / static_cast<double>(spike_slots)
                       : 0.0;
  }
  // Billed through energy_linear so per-layer recomposition is reproducible:
  //   spike:  m*(calls/T) vectors x energy_linear(k, n, snn, T, rate())
  //   dense:  m*calls     vectors x energy_linear(k, n, ann)
  double energy_pj(Precision p) const;
  // The same layer if it ran dense in one pass (ANN reference).
  double ann_equiv_pj(Precision p) const;
};

struct EnergyProfile {
  std::vector<LayerEnergy> layers;
  int64_t total_macs = 0;
  int64_t total_acs = 0;
  double total_pj(Precision p) const;      // sum of layer energies, layer order
  double ann_equiv_pj(Precision p) const;  // everything dense, single pass
};

}  // namespace bispike
