#include "core/neurons.hpp"

#include <cmath>

#include "core/common.hpp"

namespace bispike {

void NeuronConfig::validate() const {
  if (T < 1) throw ConfigError("neuron config: T must be >= 1");
  if (!(beta >= 0.0f && beta < 1.0f)) throw ConfigError("neuron config: beta must be in [0,1)");
  if (!(theta > 0.0f)) throw ConfigError("neuron config: theta must be > 0");
  if (!(k > 0.0f)) throw ConfigError("neuron config: k must be > 0");
  if (!(sg_alpha > 0.0f)) throw ConfigError("neuron config: sg_alpha must be > 0");
}

Tensor SpikeCode::realized() const {
  Tensor out(codes.shape());
  for (int64_t i = 0; i < codes.numel(); ++i) out.at(i) = codes.at(i) * amplitude;
  return out;
}

Tensor lif_charge(const Tensor& v_prev, const Tensor& x) {
  if (!v_prev.same_shape(x))
    throw ShapeError("lif_charge: shape mismatch " + v_prev.shape_str() + " vs " +
                     x.shape_str());
  Tensor m(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) m.at(i) = v_prev.at(i) + x.at(i);
  m.check_finite("lif_charge");
  return m;
}

SpikeCode lif_fire_binary(const Tensor& m, float theta) {
  SpikeCode s;
  s.codes = Tensor(m.shape());
  s.amplitude = 1.0f;
  for (int64_t i = 0; i < m.numel(); ++i) s.codes.at(i) = m.at(i) >= theta ? 1.0f : 0.0f;
  return s;
}

namespace {
void require_binary(const SpikeCode& s, const char* ctx) {
  for (int64_t i = 0; i < s.codes.numel(); ++i) {
    float c = s.codes.at(i);
    if (c != 0.0f && c != 1.0f)
      throw StateError(std::string(ctx) + ": ternary code " + std::to_string(c) +
                       " fed to a binary rule");
  }
}
void require_ternary(const SpikeCode& s, const char* ctx) {
  for (int64_t i = 0; i < s.codes.numel(); ++i) {
    float c = s.codes.at(i);
    if (c != 0.0f && c != 1.0f && c != -1.0f)
      throw StateError(std::string(ctx) + ": code " + std::to_string(c) +
                       " outside {-1,0,1}");
  }
}
}  // namespace

Tensor lif_reset(const Tensor& m, const SpikeCode& s, float beta, float v_reset) {
  if (!m.same_shape(s.codes))
    throw ShapeError("lif_reset: shape mismatch " + m.shape_str() + " vs " +
                     s.codes.shape_str());
  require_binary(s, "lif_reset");
  Tensor v(m.shape());
  for (int64_t i = 0; i < m.numel(); ++i) {
    float fired = s.codes.at(i);
    v.at(i) = beta * m.at(i) * (1.0f - fired) + v_reset * fired;
  }
  v.check_finite("lif_reset");
  return v;
}

Tensor surrogate_grad_arctan(const Tensor& m, float theta, float sg_alpha) {
  Tensor g(m.shape());
  double a = sg_alpha;
  for (int64_t i = 0; i < m.numel(); ++i) {
    double u = (M_PI / 2.0) * a * (static_cast<double>(m.at(i)) - theta);
    g.at(i) = static_cast<float>((a / 2.0) / (1.0 + u * u));
  }
  return g;
}

Tensor surrogate_value_arctan(const Tensor& m, float theta, float sg_alpha) {
  Tensor v(m.shape());
  double a = sg_alpha;
  for (int64_t i = 0; i < m.numel(); ++i) {
    double u = (M_PI / 2.0) * a * (static_cast<double>(m.at(i)) - theta);
    v.at(i) = static_cast<float>(std::atan(u) / M_PI + 0.5);
  }
  return v;
}

Tensor ste_grad_unidirectional(const Tensor& m) {
  Tensor g(m.shape());
  for (int64_t i = 0; i < m.numel(); ++i)
    g.at(i) = (m.at(i) > 0.0f && m.at(i) < 1.0f) ? 1.0f : 0.0f;
  return g;
}

TernaryProbs bi_spike_probs(const Tensor& m) {
  TernaryProbs p;
  p.p_plus = Tensor(m.shape());
  p.p_minus = Tensor(m.shape());
  p.p_zero = Tensor(m.shape());
  for (int64_t i = 0; i < m.numel(); ++i) {
    float x = m.at(i);
    float pp = x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x);
    float pm = -x < 0.0f ? 0.0f : (-x > 1.0f ? 1.0f : -x);
    p.p_plus.at(i) = pp;
    p.p_minus.at(i) = pm;
    p.p_zero.at(i) = 1.0f - pp - pm;
  }
  return p;
}

std::pair<SpikeCode, TernaryProbs> bi_spike_sample(const Tensor& m, const RngStream& rng) {
  TernaryProbs p = bi_spike_probs(m);
  SpikeCode s;
  s.codes = Tensor(m.shape());
  s.amplitude = 1.0f;
  for (int64_t i = 0; i < m.numel(); ++i) {
    float u = rng.uniform(static_cast<uint64_t>(i));
    if (m.at(i) >= 0.0f) {
      s.codes.at(i) = u < p.p_plus.at(i) ? 1.0f : 0.0f;
    } else {
      s.codes.at(i) = u < p.p_minus.at(i) ? -1.0f : 0.0f;
    }
  }
  return {std::move(s), std::move(p)};
}

SpikeCode bi_spike_forward(const Tensor& m) {
  SpikeCode s;
  s.codes = Tensor(m.shape());
  s.amplitude = 1.0f;
  for (int64_t i = 0; i < m.numel(); ++i) {
    float x = m.at(i);
    s.codes.at(i) = x >= 1.0f ? 1.0f : (x <= -1.0f ? -1.0f : 0.0f);
  }
  return s;
}

Tensor bi_spike_grad(const Tensor& m) {
  Tensor g(m.shape());
  for (int64_t i = 0; i < m.numel(); ++i)
    g.at(i) = (m.at(i) > -1.0f && m.at(i) < 1.0f) ? 1.0f : 0.0f;
  return g;
}

SpikeCode elastic_spike_forward(const Tensor& m, float alpha) {
  if (!(alpha > 0.0f))
    throw StateError("elastic_spike_forward: alpha must be > 0, got " + std::to_string(alpha));
  Tensor mh(m.shape());
  for (int64_t i = 0; i < m.numel(); ++i) mh.at(i) = m.at(i) / alpha;
  SpikeCode s = bi_spike_forward(mh);
  s.amplitude = alpha;
  return s;
}

Tensor elastic_spike_grad(const Tensor& m, float alpha) {
  if (!(alpha > 0.0f))
    throw StateError("elastic_spike_grad: alpha must be > 0");
  Tensor mh(m.shape());
  for (int64_t i = 0; i < m.numel(); ++i) mh.at(i) = m.at(i) / alpha;
  return bi_spike_grad(mh);
}

Tensor elastic_reset(const Tensor& m, const SpikeCode& s, float alpha, float v_reset,
                     ResetRule rule) {
  if (!m.same_shape(s.codes))
    throw ShapeError("elastic_reset: shape mismatch " + m.shape_str() + " vs " +
                     s.codes.shape_str());
  if (s.amplitude != alpha)
    throw StateError("elastic_reset: spike amplitude " + std::to_string(s.amplitude) +
                     " does not match alpha " + std::to_string(alpha));
  require_ternary(s, "elastic_reset");
  Tensor v(m.shape());
  for (int64_t i = 0; i < m.numel(); ++i) {
    float sv = s.codes.at(i) * s.amplitude;
    float keep = rule == ResetRule::literal ? (alpha - sv) : (alpha - std::fabs(sv));
    v.at(i) = m.at(i) * keep + v_reset * sv;
  }
  v.check_finite("elastic_reset");
  return v;
}

StepResult neuron_step(const NeuronConfig& cfg, const NeuronState& state, const Tensor& x,
                       float alpha, int t, const RngStream* rng) {
  cfg.validate();
  if (t < 0 || t >= cfg.T)
    throw StateError("neuron_step: t=" + std::to_string(t) + " outside [0," +
                     std::to_string(cfg.T) + ")");
  Tensor v_prev = state.v.numel() > 0 ? state.v : Tensor(x.shape());
  Tensor m = lif_charge(v_prev, x);
  StepResult out;
  switch (cfg.mode) {
    case NeuronMode::lif_surrogate:
    case NeuronMode::lif_ste: {
      out.spike = lif_fire_binary(m, cfg.theta);
      out.state.v = lif_reset(m, out.spike, cfg.beta, cfg.v_reset);
      break;
    }
    case NeuronMode::elastic_bi: {
      if (rng) {
        Tensor mh(m.shape());
        for (int64_t i = 0; i < m.numel(); ++i) mh.at(i) = m.at(i) / alpha;
        out.spike = bi_spike_sample(mh, *rng).first;
        out.spike.amplitude = alpha;
      } else {
        out.spike = elastic_spike_forward(m, alpha);
      }
      out.state.v = elastic_reset(m, out.spike, alpha, cfg.v_reset, cfg.reset_rule);
      break;
    }
  }
  out.state.m = std::move(m);
  return out;
}

Tensor encode_expectation(NeuronMode mode, const Tensor& m, float theta, float sg_alpha,
                          float alpha) {
  switch (mode) {
    case NeuronMode::lif_surrogate:
      return surrogate_value_arctan(m, theta, sg_alpha);
    case NeuronMode::lif_ste: {
      Tensor v(m.shape());
      for (int64_t i = 0; i < m.numel(); ++i) {
        float x = m.at(i);
        v.at(i) = x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x);
      }
      return v;
    }
    case NeuronMode::elastic_bi: {
      // alpha * clip(m/alpha, -1, 1); mirrors the hard path's scaled potential.
      Tensor v(m.shape());
      for (int64_t i = 0; i < m.numel(); ++i) {
        float mh = m.at(i) / alpha;
        mh = mh < -1.0f ? -1.0f : (mh > 1.0f ? 1.0f : mh);
        v.at(i) = alpha * mh;
      }
      return v;
    }
  }
  throw StateError("encode_expectation: bad mode");
}

Tensor encode_grad(NeuronMode mode, const Tensor& m, float theta, float sg_alpha, float alpha) {
  switch (mode) {
    case NeuronMode::lif_surrogate:
      return surrogate_grad_arctan(m, theta, sg_alpha);
    case NeuronMode::lif_ste:
      return ste_grad_unidirectional(m);
    case NeuronMode::elastic_bi:
      return elastic_spike_grad(m, alpha);
  }
  throw StateError("encode_grad: bad mode");
}

}  // namespace bispike
