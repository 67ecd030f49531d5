#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "core/model.hpp"

namespace bispike {

struct TrainConfig {
  std::string task = "synth_cls";  // synth_cls | char_lm
  int steps = 1500;
  int batch_size = 16;
  int eval_every = 100;
  float peak_lr = 2e-3f;
  int warmup_steps = 100;
  float weight_decay = 0.01f;
  float grad_clip = 1.0f;
  uint64_t seed = 7;
  int seq_len = 32;
  int train_size = 2048;
  int val_size = 256;
  std::string corpus_path;  // char_lm only

  void validate() const;
};

struct Dataset {
  TaskHead head = TaskHead::cls;
  int vocab = 0;
  int n_classes = 0;
  bool causal = false;
  std::vector<std::vector<int32_t>> seqs;
  std::vector<std::vector<int32_t>> targets_lm;
  std::vector<int32_t> labels;

  size_t size() const { return seqs.size(); }
  Batch gather(const std::vector<int64_t>& idx) const;
  Batch slice(size_t begin, size_t end) const;
};

struct Task {
  Dataset train;
  Dataset val;
};

// Deterministic task synthesis; char_lm reads the corpus file.
Task make_task(const TrainConfig& cfg);

// --- optimizer -----------------------------------------------------------

struct AdamState {
  std::map<std::string, Tensor> m, v;
  int64_t step = 0;  // completed updates
};

// Decoupled weight decay, bias-corrected moments. Walks parameters in store
// order; math per element in double, stored back as f32.
void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                AdamState& st, float lr, float weight_decay, float beta1 = 0.9f,
                float beta2 = 0.999f, float eps = 1e-8f);

// Linear ramp to peak over `warmup` steps, then linear decay to 0 at `total`.
// Updates are 1-based; step 0 (nothing applied yet) is valid and sits at the
// foot of the ramp.
float lr_schedule(int step, int total, int warmup, float peak);

// Scales gradients so their global L2 norm is at most `max_norm`; returns the
// pre-clip norm.
double clip_global_norm(std::map<std::string, Tensor>& grads,
                        const std::vector<std::string>& order, double max_norm);

// --- loops ----------------------------------------------------------------

struct EvalResult {
  double loss = 0.0;
  double metric = 0.0;  // accuracy
  SiteStats rates;
};

EvalResult evaluate(SpikingTransformer& model, const Dataset& ds, int batch_size);

struct MetricsRow {
  int step = 0;
  float lr = 0.0f;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;
  double mean_firing_rate = 0.0;
  std::vector<double> site_rates;  // spiking_sites(cfg) order
};

struct TrainSinks {
  std::function<void(const MetricsRow&)> on_eval;
  std::function<void(const SpikingTransformer&, const AdamState&, int step)> on_checkpoint;
};

struct ResumeState {
  std::map<std::string, Tensor> params;
  std::map<std::string, std::vector<float>> alpha;
  std::map<std::string, Tensor> opt_m, opt_v;
  int step = 0;
};

struct TrainResult {
  SpikingTransformer model;
  AdamState opt;
  std::vector<MetricsRow> rows;
  double calib_mean_rate = 0.0;  // on the calibration batch, right after freeze
  double final_mean_rate = 0.0;  // on the same batch, after the last step
  double final_val_loss = 0.0;
  double final_val_metric = 0.0;
};

// `base` carries the architecture knobs; task-dependent fields (vocab,
// classes, head, causal, seed) are resolved here. Batch selection for step s
// is a pure function of (seed, s), so resume equals the unbroken run.
TrainResult train_loop(const ModelConfig& base, const TrainConfig& tcfg,
                       const TrainSinks* sinks = nullptr, const ResumeState* resume = nullptr);

ModelConfig resolve_model_config(const ModelConfig& base, const TrainConfig& tcfg,
                                 const Dataset& ds);

// Worker count for parallel-safe sections (evaluation chunks, FD sweeps);
// reads BISPIKE_THREADS, default 1.
int thread_budget();

}  // namespace bispike
