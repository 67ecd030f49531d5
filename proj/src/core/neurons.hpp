#pragma once

#include <utility>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace bispike {

enum class NeuronMode { lif_surrogate, lif_ste, elastic_bi };
enum class ResetRule { literal, symmetric };

// Shared knobs for all encoder variants. `theta` is the binary firing
// threshold, `k` scales the calibrated amplitude, `sg_alpha` is the arctan
// surrogate sharpness, `beta` the membrane leak kept after a silent step.
struct NeuronConfig {
  NeuronMode mode = NeuronMode::elastic_bi;
  float beta = 0.25f;
  float v_reset = 0.0f;
  float theta = 1.0f;
  float k = 2.0f;
  int T = 1;
  float sg_alpha = 2.0f;
  ResetRule reset_rule = ResetRule::literal;

  void validate() const;  // throws ConfigError
};

struct NeuronState {
  Tensor v;  // membrane carried into the next step
  Tensor m;  // most recent pre-encoding potential
};

// Ternary (or binary) spike train for one step: codes in {-1, 0, +1} times a
// per-layer amplitude. Binary encoders use amplitude 1 and codes in {0, 1}.
struct SpikeCode {
  Tensor codes;
  float amplitude = 1.0f;

  Tensor realized() const;  // codes * amplitude elementwise
};

struct TernaryProbs {
  Tensor p_plus, p_zero, p_minus;
};

// --- binary LIF --------------------------------------------------------

// m(t) = v(t-1) + x(t). Shapes must match.
Tensor lif_charge(const Tensor& v_prev, const Tensor& x);

// Heaviside fire: code 1 where m >= theta (the boundary fires).
SpikeCode lif_fire_binary(const Tensor& m, float theta);

// v = beta * m * (1 - s) + v_reset * s. Codes must be binary.
Tensor lif_reset(const Tensor& m, const SpikeCode& s, float beta, float v_reset);

// d(spike)/dm of the arctan surrogate, evaluated at the shifted potential:
// (a/2) / (1 + ((pi/2) a (m - theta))^2). Peaks at a/2 on the threshold.
Tensor surrogate_grad_arctan(const Tensor& m, float theta, float sg_alpha);
// Straight-through for the unidirectional stochastic encoder: 1 on (0, 1),
// 0 elsewhere (both endpoints excluded).
Tensor ste_grad_unidirectional(const Tensor& m);
// Smooth stand-in value whose exact derivative is surrogate_grad_arctan:
// (1/pi) atan((pi/2) a (m - theta)) + 1/2.
Tensor surrogate_value_arctan(const Tensor& m, float theta, float sg_alpha);

// --- bidirectional ternary encoder -------------------------------------

TernaryProbs bi_spike_probs(const Tensor& m);

// Stochastic draw: +1 w.p. clip(m,0,1), -1 w.p. clip(-m,0,1), else 0.
// Element i consumes draw i of the stream.
std::pair<SpikeCode, TernaryProbs> bi_spike_sample(const Tensor& m, const RngStream& rng);

// Deterministic sign encoder on unit thresholds; |m| = 1 fires.
SpikeCode bi_spike_forward(const Tensor& m);

// Expectation-path gradient d/dm clip(m,-1,1): 1 on (-1,1), 0 outside and at
// the breakpoints. Exactly the indicator of the non-firing set.
Tensor bi_spike_grad(const Tensor& m);

// --- amplitude (elastic) encoder ----------------------------------------

// Thresholds live on the scaled potential m/alpha, so this is exactly
// alpha * bi_spike_forward(m / alpha).
SpikeCode elastic_spike_forward(const Tensor& m, float alpha);
Tensor elastic_spike_grad(const Tensor& m, float alpha);

// literal:   v = m (alpha - s) + v_reset s      (s is the realized spike)
// symmetric: v = m (alpha - |s|) + v_reset s
Tensor elastic_reset(const Tensor& m, const SpikeCode& s, float alpha, float v_reset,
                     ResetRule rule);

// --- one full step ------------------------------------------------------

struct StepResult {
  SpikeCode spike;
  NeuronState state;
};

// Charge, fire, reset for the configured mode. `alpha` is ignored by the LIF
// modes. `rng`, when given, selects the stochastic ternary encoder instead of
// the deterministic one (elastic_bi only; test and experiment use).
StepResult neuron_step(const NeuronConfig& cfg, const NeuronState& state, const Tensor& x,
                       float alpha, int t, const RngStream* rng = nullptr);

// Expectation-mode value and gradient of each encoder, used for smooth
// gradient checking and as the lone gradient rule of the hard forwards.
Tensor encode_expectation(NeuronMode mode, const Tensor& m, float theta, float sg_alpha,
                          float alpha);
Tensor encode_grad(NeuronMode mode, const Tensor& m, float theta, float sg_alpha, float alpha);

}  // namespace bispike
