#include "core/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "core/rng.hpp"

namespace bispike {

void TrainConfig::validate() const {
  if (task != "synth_cls" && task != "char_lm")
    throw ConfigError("train: unknown task '" + task + "'");
  if (steps < 1) throw ConfigError("train: steps must be >= 1");
  if (batch_size < 1 || batch_size > 32)
    throw ConfigError("train: batch_size must lie in [1,32]");
  if (steps > 5000) throw ConfigError("train: step budget capped at 5000");
  if (eval_every < 1 || steps % eval_every != 0)
    throw ConfigError("train: eval_every must divide steps");
  if (warmup_steps < 0 || warmup_steps > steps)
    throw ConfigError("train: warmup_steps must lie in [0, steps]");
  if (!(peak_lr > 0.0f)) throw ConfigError("train: peak_lr must be > 0");
  if (weight_decay < 0.0f) throw ConfigError("train: weight_decay must be >= 0");
  if (!(grad_clip > 0.0f)) throw ConfigError("train: grad_clip must be > 0");
  if (seq_len < 1) throw ConfigError("train: seq_len must be >= 1");
  if (train_size < 1 || val_size < 1)
    throw ConfigError("train: train_size and val_size must be >= 1");
}

float lr_schedule(int step, int total, int warmup, float peak) {
  if (step < 0 || step > total)
    throw StateError("lr_schedule: step " + std::to_string(step) + " outside [0," +
                     std::to_string(total) + "]");
  if (warmup > 0 && step <= warmup)
    return peak * static_cast<float>(step) / static_cast<float>(warmup);
  return peak * static_cast<float>(total - step) / static_cast<float>(total - warmup);
}

void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                AdamState& st, float lr, float weight_decay, float beta1, float beta2,
                float eps) {
  st.step += 1;
  double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(st.step));
  for (const auto& name : params.names()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;  // parameter unused this step
    const Tensor& g = git->second;
    Tensor& p = params.at(name);
    if (!p.same_shape(g))
      throw ShapeError("adamw: gradient shape " + g.shape_str() + " for parameter '" +
                       name + "' " + p.shape_str());
    for (int64_t i = 0; i < g.numel(); ++i)
      if (!std::isfinite(g.at(i)))
        throw NumericError("adamw: non-finite gradient for parameter '" + name +
                           "' at flat index " + std::to_string(i));
    auto mit = st.m.find(name);
    if (mit == st.m.end()) {
      st.m[name] = Tensor(g.shape());
      st.v[name] = Tensor(g.shape());
      mit = st.m.find(name);
    }
    Tensor& m = mit->second;
    Tensor& v = st.v[name];
    for (int64_t i = 0; i < g.numel(); ++i) {
      double gi = g.at(i);
      double mi = beta1 * static_cast<double>(m.at(i)) + (1.0 - beta1) * gi;
      double vi = beta2 * static_cast<double>(v.at(i)) + (1.0 - beta2) * gi * gi;
      m.at(i) = static_cast<float>(mi);
      v.at(i) = static_cast<float>(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      double upd = mhat / (std::sqrt(vhat) + static_cast<double>(eps)) +
                   static_cast<double>(weight_decay) * static_cast<double>(p.at(i));
      p.at(i) = static_cast<float>(static_cast<double>(p.at(i)) -
                                   static_cast<double>(lr) * upd);
    }
  }
}

double clip_global_norm(std::map<std::string, Tensor>& grads,
                        const std::vector<std::string>& order, double max_norm) {
  double sq = 0.0;
  for (const auto& name : order) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    for (int64_t i = 0; i < g.numel(); ++i) {
      double x = g.at(i);
      sq += x * x;
    }
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    float f = static_cast<float>(max_norm / norm);
    for (const auto& name : order) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      Tensor& g = it->second;
      for (int64_t i = 0; i < g.numel(); ++i) g.at(i) *= f;
    }
  }
  return norm;
}

int thread_budget() {
  const char* env = std::getenv("BISPIKE_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n < 1 ? 1 : (n > 64 ? 64 : n);
}

ModelConfig resolve_model_config(const ModelConfig& base, const TrainConfig& tcfg,
                                 const Dataset& ds) {
  ModelConfig cfg = base;
  cfg.vocab = ds.vocab;
  cfg.n_classes = ds.n_classes;
  cfg.head = ds.head;
  cfg.causal = ds.causal;
  cfg.seed = tcfg.seed;
  if (cfg.max_len < tcfg.seq_len) cfg.max_len = tcfg.seq_len;
  cfg.validate();
  return cfg;
}

namespace {

std::vector<int64_t> select_batch(uint64_t seed, int step, int batch_size, size_t pool) {
  RngStream rng(seed, stream_id("batch"));
  std::vector<int64_t> idx(batch_size);
  for (int j = 0; j < batch_size; ++j) {
    uint64_t e = (static_cast<uint64_t>(step) << 32) | static_cast<uint32_t>(j);
    idx[j] = static_cast<int64_t>(rng.bits32(e) % static_cast<uint64_t>(pool));
  }
  return idx;
}

struct ChunkEval {
  double loss_rows = 0.0;
  int64_t rows = 0;
  int64_t correct = 0;
  int64_t total_preds = 0;
  SiteStats rates;
};

ChunkEval eval_chunk(SpikingTransformer& model, const Dataset& ds, size_t begin, size_t end) {
  ChunkEval ce;
  Batch b = ds.slice(begin, end);
  Tape tape;
  ForwardHooks hooks;
  hooks.rates = &ce.rates;
  ForwardOptions opts;
  opts.require_grad = false;
  BatchResult r = model_forward(tape, model, b, opts, &hooks);
  ce.loss_rows = static_cast<double>(r.loss.val().at(0)) * static_cast<double>(r.rows);
  ce.rows = r.rows;
  for (size_t s = 0; s < b.tokens.size(); ++s) {
    const Tensor& lg = r.logits[s];
    if (ds.head == TaskHead::cls) {
      int best = 0;
      for (int64_t c = 1; c < lg.cols(); ++c)
        if (lg.at2(0, c) > lg.at2(0, best)) best = static_cast<int>(c);
      if (best == b.labels[s]) ++ce.correct;
      ++ce.total_preds;
    } else {
      for (int64_t i = 0; i < lg.rows(); ++i) {
        int best = 0;
        for (int64_t c = 1; c < lg.cols(); ++c)
          if (lg.at2(i, c) > lg.at2(i, best)) best = static_cast<int>(c);
        if (best == b.targets_lm[s][i]) ++ce.correct;
        ++ce.total_preds;
      }
    }
  }
  return ce;
}

void merge_stats(SiteStats& into, const SiteStats& from) {
  for (const auto& [site, v] : from.counts)
    for (size_t t = 0; t < v.size(); ++t)
      into.add(site, static_cast<int>(t), v[t].first, v[t].second);
}

}  // namespace

EvalResult evaluate(SpikingTransformer& model, const Dataset& ds, int batch_size) {
  if (ds.size() == 0) throw ConfigError("evaluate: empty validation set");
  size_t n = ds.size();
  size_t chunk = static_cast<size_t>(batch_size);
  std::vector<std::pair<size_t, size_t>> spans;
  for (size_t b = 0; b < n; b += chunk) spans.push_back({b, std::min(n, b + chunk)});

  std::vector<ChunkEval> results(spans.size());
  int workers = thread_budget();
  if (workers <= 1 || spans.size() <= 1) {
    for (size_t i = 0; i < spans.size(); ++i)
      results[i] = eval_chunk(model, ds, spans[i].first, spans[i].second);
  } else {
    // Chunks are independent (fresh tape each); results merge in chunk order,
    // so the reduction is identical for any worker count.
    std::atomic<size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= spans.size()) return;
        results[i] = eval_chunk(model, ds, spans[i].first, spans[i].second);
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min<int>(workers, static_cast<int>(spans.size())); ++w)
      pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  EvalResult ev;
  double loss_rows = 0.0;
  int64_t rows = 0, correct = 0, preds = 0;
  for (const auto& ce : results) {
    loss_rows += ce.loss_rows;
    rows += ce.rows;
    correct += ce.correct;
    preds += ce.total_preds;
    merge_stats(ev.rates, ce.rates);
  }
  ev.loss = loss_rows / static_cast<double>(rows);
  ev.metric = preds ? static_cast<double>(correct) / static_cast<double>(preds) : 0.0;
  return ev;
}

TrainResult train_loop(const ModelConfig& base, const TrainConfig& tcfg,
                       const TrainSinks* sinks, const ResumeState* resume) {
  tcfg.validate();
  Task task = make_task(tcfg);
  ModelConfig mcfg = resolve_model_config(base, tcfg, task.train);

  TrainResult out;
  out.model = SpikingTransformer::init(mcfg);
  SpikingTransformer& model = out.model;
  AdamState& opt = out.opt;
  int start_step = 1;

  bool elastic = mcfg.mode == NeuronMode::elastic_bi || mcfg.kv_mode == NeuronMode::elastic_bi;
  Batch calib_batch =
      task.train.gather(select_batch(tcfg.seed, 0, tcfg.batch_size, task.train.size()));

  if (resume) {
    for (const auto& name : model.params.names()) {
      auto it = resume->params.find(name);
      if (it == resume->params.end())
        throw StateError("resume: checkpoint is missing parameter '" + name + "'");
      if (!it->second.same_shape(model.params.at(name)))
        throw StateError("resume: shape mismatch for parameter '" + name + "'");
      model.params.at(name) = it->second;
    }
    model.alpha = AlphaTable::restore(resume->alpha);
    opt.m = resume->opt_m;
    opt.v = resume->opt_v;
    opt.step = resume->step;
    start_step = resume->step + 1;
    if (resume->step >= tcfg.steps)
      throw ConfigError("resume: checkpoint step " + std::to_string(resume->step) +
                        " is not below train.steps " + std::to_string(tcfg.steps));
    if (resume->step % tcfg.eval_every != 0)
      throw ConfigError("resume: checkpoint step must sit on an eval boundary");
  } else {
    // The first drawn batch calibrates amplitudes and is never trained on, in
    // any mode, so arm-to-arm step budgets stay comparable.
    if (elastic) {
      Tape tape;
      ForwardOptions opts;
      opts.calibrate = true;
      opts.require_grad = false;
      SiteStats calib_rates;
      ForwardHooks hooks;
      hooks.rates = &calib_rates;
      model_forward(tape, model, calib_batch, opts, &hooks);
      out.calib_mean_rate = calib_rates.mean_rate();
    }
    model.alpha.freeze();
  }

  std::vector<std::string> sites = spiking_sites(mcfg);
  double window_loss = 0.0;
  int window_n = 0;

  for (int s = start_step; s <= tcfg.steps; ++s) {
    Batch batch = task.train.gather(select_batch(tcfg.seed, s, tcfg.batch_size,
                                                 task.train.size()));
    Tape tape;
    BatchResult r = model_forward(tape, model, batch);
    tape.backward(r.loss);

    std::map<std::string, Tensor> grads;
    for (const auto& name : model.params.names()) {
      const Var& v = r.bound.at(name);
      if (tape.has_grad(v)) grads[name] = tape.grad(v);
    }
    clip_global_norm(grads, model.params.names(), tcfg.grad_clip);
    float lr = lr_schedule(s, tcfg.steps, tcfg.warmup_steps, tcfg.peak_lr);
    adamw_step(model.params, grads, opt, lr, tcfg.weight_decay);

    window_loss += r.loss.val().at(0);
    window_n += 1;

    if (s % tcfg.eval_every == 0) {
      EvalResult ev = evaluate(model, task.val, tcfg.batch_size);
      MetricsRow row;
      row.step = s;
      row.lr = lr;
      row.train_loss = window_loss / window_n;
      row.val_loss = ev.loss;
      row.val_metric = ev.metric;
      row.mean_firing_rate = ev.rates.mean_rate();
      for (const auto& site : sites) row.site_rates.push_back(ev.rates.site_rate(site));
      out.rows.push_back(row);
      window_loss = 0.0;
      window_n = 0;
      if (sinks && sinks->on_eval) sinks->on_eval(row);
      if (sinks && sinks->on_checkpoint) sinks->on_checkpoint(model, opt, s);
      out.final_val_loss = ev.loss;
      out.final_val_metric = ev.metric;
    }
  }

  {
    Tape tape;
    ForwardOptions opts;
    opts.require_grad = false;
    SiteStats final_rates;
    ForwardHooks hooks;
    hooks.rates = &final_rates;
    model_forward(tape, model, calib_batch, opts, &hooks);
    out.final_mean_rate = final_rates.mean_rate();
  }
  return out;
}

}  // namespace bispike
