#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "core/calibration.hpp"
#include "core/neurons.hpp"
#include "core/tape.hpp"

namespace bispike {

enum class TaskHead { lm, cls };

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 2;
  int d_ff = 128;
  int T = 1;
  int vocab = 16;
  int n_classes = 2;
  int max_len = 128;
  TaskHead head = TaskHead::cls;
  bool causal = false;
  NeuronMode mode = NeuronMode::elastic_bi;     // spiking linear sites
  NeuronMode kv_mode = NeuronMode::elastic_bi;  // attention K/V sites
  float k = 2.0f;
  float beta = 0.25f;  // linear sites; K/V sites are stateless (beta 0)
  float v_reset = 0.0f;
  float theta = 1.0f;
  float sg_alpha = 2.0f;
  ResetRule reset_rule = ResetRule::literal;
  uint64_t seed = 7;

  int head_dim() const { return d_model / n_heads; }
  int out_dim() const { return head == TaskHead::lm ? vocab : n_classes; }
  void validate() const;
};

// Named parameters in fixed creation order; the order is the serialization
// and optimizer walk order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return values_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> values_;
};

// Per-site firing tallies, split by timestep.
struct SiteStats {
  std::map<std::string, std::vector<std::pair<int64_t, int64_t>>> counts;  // (fired, total)
  void add(const std::string& site, int t, int64_t fired, int64_t total);
  double site_rate(const std::string& site) const;
  double site_rate_at(const std::string& site, int t) const;
  double mean_rate() const;  // fired / total over everything
};

// Capped per-site samples of encoder Jacobian diagonals.
struct JacSamples {
  std::map<std::string, std::vector<float>> values;
  size_t cap = 1u << 21;
  void add(const std::string& site, const Tensor& jac);
};

struct ForwardHooks {
  AuditLog* audit = nullptr;
  SiteStats* rates = nullptr;
  JacSamples* jacs = nullptr;
};

struct ForwardOptions {
  bool expectation = false;  // smooth encoder values instead of hard spikes
  bool calibrate = false;    // fill missing alpha entries from this batch
  bool require_grad = true;
};

struct Batch {
  std::vector<std::vector<int32_t>> tokens;
  std::vector<std::vector<int32_t>> targets_lm;  // per position (lm head)
  std::vector<int32_t> labels;                   // per sequence (cls head)
  bool has_targets() const { return !targets_lm.empty() || !labels.empty(); }
  size_t size() const { return tokens.size(); }
};

// Parameter leaves bound to one tape.
struct TapeParams {
  std::map<std::string, Var> vars;
  const Var& at(const std::string& name) const;
};

struct BatchResult {
  Var loss;                    // invalid when the batch carried no targets
  std::vector<Tensor> logits;  // per sequence
  int64_t rows = 0;            // loss rows (positions for lm, sequences for cls)
  TapeParams bound;            // parameter leaves on the caller's tape
};

struct SpikingTransformer {
  ModelConfig cfg;
  ParamStore params;
  AlphaTable alpha;
  bool merged = false;
  // weight name -> per-timestep amplitude-folded copy (elastic linear sites)
  std::map<std::string, std::vector<Tensor>> merged_weights;

  static SpikingTransformer init(ModelConfig cfg);

  // Folds each linear site's per-step amplitude into the weight matrix it
  // feeds; those sites then emit unit-amplitude codes. Requires a frozen
  // alpha table; merging twice is an error.
  void merge_alpha_into_weights();
};

TapeParams bind_params(Tape& tape, const SpikingTransformer& model, bool require_grad);

BatchResult model_forward(Tape& tape, SpikingTransformer& model, const Batch& batch,
                          const ForwardOptions& opts = {}, ForwardHooks* hooks = nullptr);

// Spiking-site names of this architecture, in forward order.
std::vector<std::string> spiking_sites(const ModelConfig& cfg);
// The encoder site feeding an audited product label, or "" for real-valued
// products (Q projection, output head).
std::string feeding_site(const std::string& product_label);
// Whether a product label executes once per timestep (everything but the
// output head, which runs on the temporal mean).
bool label_runs_per_timestep(const std::string& product_label);

}  // namespace bispike
