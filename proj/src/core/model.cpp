#include "core/model.hpp"

#include <cmath>

#include "core/rng.hpp"

namespace bispike {

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model: n_layers must be >= 1");
  if (d_model < 1 || d_ff < 1) throw ConfigError("model: dims must be >= 1");
  if (n_heads < 1 || d_model % n_heads != 0)
    throw ConfigError("model: d_model must be divisible by n_heads");
  if (vocab < 1) throw ConfigError("model: vocab must be >= 1");
  if (max_len < 1) throw ConfigError("model: max_len must be >= 1");
  if (head == TaskHead::cls && n_classes < 2)
    throw ConfigError("model: cls head needs n_classes >= 2");
  NeuronConfig nc;
  nc.mode = mode;
  nc.beta = beta;
  nc.v_reset = v_reset;
  nc.theta = theta;
  nc.k = k;
  nc.T = T;
  nc.sg_alpha = sg_alpha;
  nc.reset_rule = reset_rule;
  nc.validate();
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (values_.count(name)) throw StateError("duplicate parameter '" + name + "'");
  order_.push_back(name);
  return values_[name] = std::move(t);
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw StateError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw StateError("unknown parameter '" + name + "'");
  return it->second;
}

void SiteStats::add(const std::string& site, int t, int64_t fired, int64_t total) {
  auto& v = counts[site];
  if (t >= static_cast<int>(v.size())) v.resize(t + 1, {0, 0});
  v[t].first += fired;
  v[t].second += total;
}

double SiteStats::site_rate(const std::string& site) const {
  auto it = counts.find(site);
  if (it == counts.end()) return 0.0;
  int64_t f = 0, n = 0;
  for (auto& [fired, total] : it->second) {
    f += fired;
    n += total;
  }
  return n ? static_cast<double>(f) / static_cast<double>(n) : 0.0;
}

double SiteStats::site_rate_at(const std::string& site, int t) const {
  auto it = counts.find(site);
  if (it == counts.end() || t >= static_cast<int>(it->second.size())) return 0.0;
  auto [f, n] = it->second[t];
  return n ? static_cast<double>(f) / static_cast<double>(n) : 0.0;
}

double SiteStats::mean_rate() const {
  int64_t f = 0, n = 0;
  for (auto& [site, v] : counts)
    for (auto& [fired, total] : v) {
      f += fired;
      n += total;
    }
  return n ? static_cast<double>(f) / static_cast<double>(n) : 0.0;
}

void JacSamples::add(const std::string& site, const Tensor& jac) {
  auto& v = values[site];
  for (int64_t i = 0; i < jac.numel() && v.size() < cap; ++i) v.push_back(jac.at(i));
}

namespace {

Tensor init_normal(std::vector<int64_t> shape, uint64_t seed, const std::string& name,
                   float stddev) {
  Tensor t(std::move(shape));
  RngStream rng(seed, stream_id("init/" + name));
  for (int64_t i = 0; i < t.numel(); ++i)
    t.at(i) = stddev * static_cast<float>(rng.gaussian(static_cast<uint64_t>(i)));
  return t;
}

std::string bprefix(int i) { return "b" + std::to_string(i) + "."; }

}  // namespace

std::vector<std::string> spiking_sites(const ModelConfig& cfg) {
  std::vector<std::string> out;
  for (int i = 0; i < cfg.n_layers; ++i) {
    std::string p = bprefix(i);
    out.push_back(p + "attn_in");
    out.push_back(p + "attn_k");
    out.push_back(p + "attn_v");
    out.push_back(p + "attn_out");
    out.push_back(p + "ff_in");
    out.push_back(p + "ff_mid");
  }
  return out;
}

std::string feeding_site(const std::string& label) {
  auto dot = label.find('.');
  if (dot == std::string::npos) return "";
  std::string p = label.substr(0, dot + 1);
  std::string tail = label.substr(dot + 1);
  if (tail == "k_proj" || tail == "v_proj") return p + "attn_in";
  if (tail == "scores") return p + "attn_k";
  if (tail == "ctx") return p + "attn_v";
  if (tail == "o_proj") return p + "attn_out";
  if (tail == "ff1") return p + "ff_in";
  if (tail == "ff2") return p + "ff_mid";
  return "";
}

bool label_runs_per_timestep(const std::string& label) { return label != "head"; }

SpikingTransformer SpikingTransformer::init(ModelConfig cfg) {
  cfg.validate();
  SpikingTransformer m;
  m.cfg = cfg;
  auto& P = m.params;
  uint64_t s = cfg.seed;
  int64_t d = cfg.d_model, ff = cfg.d_ff;
  P.add("emb_tok", init_normal({cfg.vocab, d}, s, "emb_tok", 0.02f));
  P.add("emb_pos", init_normal({cfg.max_len, d}, s, "emb_pos", 0.02f));
  for (int i = 0; i < cfg.n_layers; ++i) {
    std::string p = bprefix(i);
    P.add(p + "ln1_g", Tensor::full({d}, 1.0f));
    P.add(p + "ln1_b", Tensor({d}));
    P.add(p + "wq", init_normal({d, d}, s, p + "wq", 0.02f));
    P.add(p + "bq", Tensor({d}));
    P.add(p + "wk", init_normal({d, d}, s, p + "wk", 0.02f));
    P.add(p + "bk", Tensor({d}));
    P.add(p + "wv", init_normal({d, d}, s, p + "wv", 0.02f));
    P.add(p + "bv", Tensor({d}));
    P.add(p + "wo", init_normal({d, d}, s, p + "wo", 0.02f));
    P.add(p + "bo", Tensor({d}));
    P.add(p + "ln2_g", Tensor::full({d}, 1.0f));
    P.add(p + "ln2_b", Tensor({d}));
    P.add(p + "w1", init_normal({d, ff}, s, p + "w1", 0.02f));
    P.add(p + "b1", Tensor({ff}));
    P.add(p + "w2", init_normal({ff, d}, s, p + "w2", 0.02f));
    P.add(p + "b2", Tensor({d}));
  }
  P.add("lnf_g", Tensor::full({d}, 1.0f));
  P.add("lnf_b", Tensor({d}));
  P.add("w_head", init_normal({d, cfg.out_dim()}, s, "w_head", 0.02f));
  P.add("b_head", Tensor({static_cast<int64_t>(cfg.out_dim())}));
  return m;
}

void SpikingTransformer::merge_alpha_into_weights() {
  if (merged) throw StateError("merge_alpha_into_weights: already merged");
  if (!alpha.frozen())
    throw StateError("merge_alpha_into_weights: alpha table must be frozen first");
  if (cfg.mode != NeuronMode::elastic_bi) {
    merged = true;  // nothing to fold for binary encoders
    return;
  }
  for (int i = 0; i < cfg.n_layers; ++i) {
    std::string p = bprefix(i);
    const std::pair<std::string, std::string> folds[] = {
        {p + "wk", p + "attn_in"}, {p + "wv", p + "attn_in"}, {p + "wo", p + "attn_out"},
        {p + "w1", p + "ff_in"},   {p + "w2", p + "ff_mid"},
    };
    for (auto& [wname, site] : folds) {
      const Tensor& w = params.at(wname);
      std::vector<Tensor> per_t;
      for (int t = 0; t < cfg.T; ++t) {
        float a = alpha.at(site, t);
        Tensor wm(w.shape());
        for (int64_t e = 0; e < w.numel(); ++e) wm.at(e) = a * w.at(e);
        per_t.push_back(std::move(wm));
      }
      merged_weights[wname] = std::move(per_t);
    }
  }
  merged = true;
}

const Var& TapeParams::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw StateError("unbound parameter '" + name + "'");
  return it->second;
}

TapeParams bind_params(Tape& tape, const SpikingTransformer& model, bool require_grad) {
  TapeParams tp;
  for (const auto& name : model.params.names())
    tp.vars[name] = tape.leaf(model.params.at(name), require_grad, name.c_str());
  return tp;
}

namespace {

const char* encode_op_name(NeuronMode mode) {
  switch (mode) {
    case NeuronMode::lif_surrogate: return "lif_surrogate";
    case NeuronMode::lif_ste: return "lif_ste";
    case NeuronMode::elastic_bi: return "bi_spike";
  }
  return "spike";
}

struct ForwardCtx {
  Tape& tape;
  SpikingTransformer& M;
  const ForwardOptions& opts;
  ForwardHooks* hooks;
  std::map<std::string, Var> state;  // membrane per stateful site, whole batch
};

// Charge, encode, reset for one site at one timestep. `foldable` marks the
// linear sites whose amplitude merges into the downstream weight matrix.
Var site_step(ForwardCtx& C, const std::string& site, NeuronMode mode, bool stateful,
              bool foldable, Var x, int t) {
  const ModelConfig& cfg = C.M.cfg;
  Var m_var = x;
  if (stateful) {
    auto it = C.state.find(site);
    if (it != C.state.end()) m_var = add(it->second, x);
  }
  const Tensor& m = m_var.val();
  float a = 1.0f;
  if (mode == NeuronMode::elastic_bi) {
    if (C.opts.calibrate && !C.M.alpha.has(site, t))
      C.M.alpha.set(site, t, calibrate_alpha(m, cfg.k));
    a = C.M.alpha.at(site, t);
  }
  Tensor jac = encode_grad(mode, m, cfg.theta, cfg.sg_alpha, a);
  if (C.hooks && C.hooks->jacs) C.hooks->jacs->add(site, jac);
  const char* op = encode_op_name(mode);

  Var s;
  Var s_reset;
  if (C.opts.expectation) {
    Tensor val = encode_expectation(mode, m, cfg.theta, cfg.sg_alpha, a);
    s = custom_grad_with_value(m_var, std::move(val), std::move(jac), op);
    s_reset = s;
  } else {
    SpikeCode code = mode == NeuronMode::elastic_bi ? elastic_spike_forward(m, a)
                                                    : lif_fire_binary(m, cfg.theta);
    if (C.hooks && C.hooks->rates) {
      int64_t fired = 0;
      for (int64_t i = 0; i < code.codes.numel(); ++i)
        if (code.codes.at(i) != 0.0f) ++fired;
      C.hooks->rates->add(site, t, fired, code.codes.numel());
    }
    auto codes = std::make_shared<Tensor>(code.codes);
    bool unit = foldable && C.M.merged && mode == NeuronMode::elastic_bi;
    float amp = mode == NeuronMode::elastic_bi ? (unit ? 1.0f : a) : 1.0f;
    Tensor realized(codes->shape());
    for (int64_t i = 0; i < codes->numel(); ++i) realized.at(i) = codes->at(i) * amp;
    s = spike_encode(m_var, std::move(realized), jac, codes, amp, op);
    s_reset = s;
    if (unit && stateful) {
      // Reset dynamics always see the full-amplitude spike.
      Tensor full(codes->shape());
      for (int64_t i = 0; i < codes->numel(); ++i) full.at(i) = codes->at(i) * a;
      s_reset = spike_encode(m_var, std::move(full), std::move(jac), codes, a, op);
    }
  }

  if (stateful) {
    Var v_next;
    if (mode == NeuronMode::elastic_bi) {
      Var sub_term = cfg.reset_rule == ResetRule::symmetric ? vabs(s_reset) : s_reset;
      Var keep = add_scalar(scale(sub_term, -1.0f), a);
      v_next = mul(m_var, keep);
    } else {
      Var one_minus = add_scalar(scale(s_reset, -1.0f), 1.0f);
      v_next = scale(mul(m_var, one_minus), cfg.beta);
    }
    if (cfg.v_reset != 0.0f) v_next = add(v_next, scale(s_reset, cfg.v_reset));
    C.state[site] = v_next;
  }
  return s;
}

// Linear fed by a spike encoder. Uses the sparse accumulate path on hard
// spikes and plain dense ops on expectation values.
Var site_linear(ForwardCtx& C, const TapeParams& P, const std::string& wname,
                const std::string& bname, Var s, int t, const std::string& label) {
  Var w;
  if (!C.opts.expectation && C.M.merged && C.M.merged_weights.count(wname)) {
    w = C.tape.leaf(C.M.merged_weights.at(wname)[t], false, wname.c_str());
  } else {
    w = P.at(wname);
  }
  const Var& b = P.at(bname);
  if (C.opts.expectation) return add_rowvec(matmul(s, w, label.c_str()), b);
  return spike_linear(s, w, b, label.c_str());
}

}  // namespace

BatchResult model_forward(Tape& tape, SpikingTransformer& model, const Batch& batch,
                          const ForwardOptions& opts, ForwardHooks* hooks) {
  const ModelConfig& cfg = model.cfg;
  if (batch.tokens.empty()) throw StateError("model_forward: empty batch");
  int64_t L = static_cast<int64_t>(batch.tokens[0].size());
  if (L < 1 || L > cfg.max_len)
    throw StateError("model_forward: sequence length " + std::to_string(L) +
                     " outside [1," + std::to_string(cfg.max_len) + "]");
  for (const auto& seq : batch.tokens)
    if (static_cast<int64_t>(seq.size()) != L)
      throw StateError("model_forward: ragged batch");
  int64_t B = static_cast<int64_t>(batch.size());

  if (cfg.mode == NeuronMode::elastic_bi || cfg.kv_mode == NeuronMode::elastic_bi) {
    if (!opts.calibrate && !model.alpha.frozen())
      throw StateError("model_forward: amplitude encoders need a calibrated alpha table");
  }

  ForwardCtx C{tape, model, opts, hooks, {}};
  TapeParams P = bind_params(tape, model, opts.require_grad);
  tape.audit = hooks ? hooks->audit : nullptr;

  // Static input: the same embedded batch drives every timestep.
  std::vector<int32_t> flat_toks, flat_pos;
  flat_toks.reserve(B * L);
  flat_pos.reserve(B * L);
  for (const auto& seq : batch.tokens)
    for (int64_t j = 0; j < L; ++j) {
      flat_toks.push_back(seq[j]);
      flat_pos.push_back(static_cast<int32_t>(j));
    }
  Var x_emb = add(gather_rows(P.at("emb_tok"), flat_toks),
                  gather_rows(P.at("emb_pos"), flat_pos));

  int64_t dh = cfg.head_dim();
  float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
  Var hf_sum;

  for (int t = 0; t < cfg.T; ++t) {
    Var h = x_emb;
    for (int i = 0; i < cfg.n_layers; ++i) {
      std::string p = bprefix(i);
      Var y = layernorm(h, P.at(p + "ln1_g"), P.at(p + "ln1_b"));
      Var q = add_rowvec(matmul(y, P.at(p + "wq"), (p + "q_proj").c_str()), P.at(p + "bq"));
      Var s_in = site_step(C, p + "attn_in", cfg.mode, true, true, y, t);
      Var kp = site_linear(C, P, p + "wk", p + "bk", s_in, t, p + "k_proj");
      Var vp = site_linear(C, P, p + "wv", p + "bv", s_in, t, p + "v_proj");
      Var ks = site_step(C, p + "attn_k", cfg.kv_mode, false, false, kp, t);
      Var vs = site_step(C, p + "attn_v", cfg.kv_mode, false, false, vp, t);

      std::vector<Var> seq_ctx;
      seq_ctx.reserve(B);
      std::string scores_label = p + "scores";
      std::string ctx_label = p + "ctx";
      for (int64_t sidx = 0; sidx < B; ++sidx) {
        Var qs = slice_rows(q, sidx * L, (sidx + 1) * L);
        Var kss = slice_rows(ks, sidx * L, (sidx + 1) * L);
        Var vss = slice_rows(vs, sidx * L, (sidx + 1) * L);
        std::vector<Var> head_ctx;
        head_ctx.reserve(cfg.n_heads);
        for (int hh = 0; hh < cfg.n_heads; ++hh) {
          Var qh = slice_cols(qs, hh * dh, (hh + 1) * dh);
          Var kh = slice_cols(kss, hh * dh, (hh + 1) * dh);
          Var vh = slice_cols(vss, hh * dh, (hh + 1) * dh);
          Var sc = C.opts.expectation ? matmul_nt(qh, kh, scores_label.c_str())
                                      : spike_matmul_nt(qh, kh, scores_label.c_str());
          Var att = softmax_rows(scale(sc, inv_sqrt_dh), cfg.causal);
          Var ctx_h = C.opts.expectation ? matmul(att, vh, ctx_label.c_str())
                                         : spike_matmul(att, vh, ctx_label.c_str());
          head_ctx.push_back(ctx_h);
        }
        seq_ctx.push_back(cfg.n_heads > 1 ? concat_cols(head_ctx) : head_ctx[0]);
      }
      Var ctx = B > 1 ? concat_rows(seq_ctx) : seq_ctx[0];

      Var s_out = site_step(C, p + "attn_out", cfg.mode, true, true, ctx, t);
      Var ao = site_linear(C, P, p + "wo", p + "bo", s_out, t, p + "o_proj");
      h = add(h, ao);

      Var y2 = layernorm(h, P.at(p + "ln2_g"), P.at(p + "ln2_b"));
      Var sf = site_step(C, p + "ff_in", cfg.mode, true, true, y2, t);
      Var u = site_linear(C, P, p + "w1", p + "b1", sf, t, p + "ff1");
      Var sm = site_step(C, p + "ff_mid", cfg.mode, true, true, u, t);
      Var f = site_linear(C, P, p + "w2", p + "b2", sm, t, p + "ff2");
      h = add(h, f);
    }
    Var hf = layernorm(h, P.at("lnf_g"), P.at("lnf_b"));
    hf_sum = t == 0 ? hf : add(hf_sum, hf);
  }
  Var hmean = cfg.T > 1 ? scale(hf_sum, 1.0f / static_cast<float>(cfg.T)) : hf_sum;

  BatchResult res;
  if (cfg.head == TaskHead::lm) {
    Var logits = add_rowvec(matmul(hmean, P.at("w_head"), "head"), P.at("b_head"));
    for (int64_t sidx = 0; sidx < B; ++sidx) {
      Var ls = slice_rows(logits, sidx * L, (sidx + 1) * L);
      res.logits.push_back(ls.val());
    }
    if (!batch.targets_lm.empty()) {
      if (batch.targets_lm.size() != batch.tokens.size())
        throw StateError("model_forward: target count mismatch");
      std::vector<int32_t> flat_tgt;
      flat_tgt.reserve(B * L);
      for (const auto& tgt : batch.targets_lm) {
        if (static_cast<int64_t>(tgt.size()) != L)
          throw StateError("model_forward: target length mismatch");
        for (int32_t v : tgt) flat_tgt.push_back(v);
      }
      res.loss = cross_entropy_logits(logits, flat_tgt);
      res.rows = B * L;
    }
  } else {
    std::vector<Var> pooled;
    pooled.reserve(B);
    for (int64_t sidx = 0; sidx < B; ++sidx)
      pooled.push_back(mean_rows(slice_rows(hmean, sidx * L, (sidx + 1) * L)));
    Var feat = B > 1 ? concat_rows(pooled) : pooled[0];
    Var logits = add_rowvec(matmul(feat, P.at("w_head"), "head"), P.at("b_head"));
    for (int64_t sidx = 0; sidx < B; ++sidx)
      res.logits.push_back(slice_rows(logits, sidx, sidx + 1).val());
    if (!batch.labels.empty()) {
      if (batch.labels.size() != batch.tokens.size())
        throw StateError("model_forward: label count mismatch");
      res.loss = cross_entropy_logits(logits, batch.labels);
      res.rows = B;
    }
  }
  res.bound = P;
  tape.audit = nullptr;
  return res;
}

}  // namespace bispike
