#include "core/runconfig.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "core/common.hpp"
#include "json.hpp"

namespace bispike {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& path,
                const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key " + path + "/" + it.key());
}

template <typename T>
void read_field(const json& obj, const char* key, const std::string& path, T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception&) {
    throw ConfigError("config: bad value at " + path + "/" + key);
  }
}

void read_mode(const json& obj, const char* key, const std::string& path,
               NeuronMode& out) {
  if (!obj.contains(key)) return;
  std::string s;
  read_field(obj, key, path, s);
  out = neuron_mode_from(s, path + "/" + key);
}

}  // namespace

std::string neuron_mode_name(NeuronMode m) {
  switch (m) {
    case NeuronMode::lif_surrogate: return "lif_surrogate";
    case NeuronMode::lif_ste: return "lif_ste";
    case NeuronMode::elastic_bi: return "elastic_bi";
  }
  throw StateError("neuron_mode_name: bad enum value");
}

NeuronMode neuron_mode_from(const std::string& s, const std::string& path) {
  if (s == "lif_surrogate") return NeuronMode::lif_surrogate;
  if (s == "lif_ste") return NeuronMode::lif_ste;
  if (s == "elastic_bi") return NeuronMode::elastic_bi;
  throw ConfigError("config: bad value at " + path +
                    " (want lif_surrogate | lif_ste | elastic_bi)");
}

std::string reset_rule_name(ResetRule r) {
  return r == ResetRule::literal ? "literal" : "symmetric";
}

ResetRule reset_rule_from(const std::string& s, const std::string& path) {
  if (s == "literal") return ResetRule::literal;
  if (s == "symmetric") return ResetRule::symmetric;
  throw ConfigError("config: bad value at " + path + " (want literal | symmetric)");
}

void AnalysisConfig::validate() const {
  if (!(relu_p > 0.0f && relu_p < 1.0f))
    throw ConfigError("analysis: relu_p must lie in (0,1)");
  if (sample_items < 1 || sample_items > 4096)
    throw ConfigError("analysis: sample_items must lie in [1,4096]");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  analysis.validate();
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  check_keys(j, "", {"model", "train", "analysis", "io"});

  RunConfig rc;
  if (j.contains("model")) {
    const json& m = j["model"];
    if (!m.is_object()) throw ConfigError("config: /model must be an object");
    check_keys(m, "/model",
               {"n_layers", "d_model", "n_heads", "d_ff", "T", "max_len", "mode",
                "kv_mode", "k", "beta", "v_reset", "theta", "sg_alpha", "reset_rule"});
    read_field(m, "n_layers", "/model", rc.model.n_layers);
    read_field(m, "d_model", "/model", rc.model.d_model);
    read_field(m, "n_heads", "/model", rc.model.n_heads);
    read_field(m, "d_ff", "/model", rc.model.d_ff);
    read_field(m, "T", "/model", rc.model.T);
    read_field(m, "max_len", "/model", rc.model.max_len);
    read_mode(m, "mode", "/model", rc.model.mode);
    if (m.contains("kv_mode")) {
      read_mode(m, "kv_mode", "/model", rc.model.kv_mode);
    } else {
      rc.model.kv_mode = rc.model.mode;
    }
    read_field(m, "k", "/model", rc.model.k);
    read_field(m, "beta", "/model", rc.model.beta);
    read_field(m, "v_reset", "/model", rc.model.v_reset);
    read_field(m, "theta", "/model", rc.model.theta);
    read_field(m, "sg_alpha", "/model", rc.model.sg_alpha);
    if (m.contains("reset_rule")) {
      std::string s;
      read_field(m, "reset_rule", "/model", s);
      rc.model.reset_rule = reset_rule_from(s, "/model/reset_rule");
    }
  }

  if (!j.contains("train") || !j["train"].is_object() ||
      !j["train"].contains("task"))
    throw ConfigError("config: /train/task is required");
  {
    const json& t = j["train"];
    check_keys(t, "/train",
               {"task", "steps", "batch_size", "eval_every", "peak_lr", "warmup_steps",
                "weight_decay", "grad_clip", "seed", "seq_len", "train_size", "val_size",
                "corpus_path"});
    read_field(t, "task", "/train", rc.train.task);
    read_field(t, "steps", "/train", rc.train.steps);
    read_field(t, "batch_size", "/train", rc.train.batch_size);
    read_field(t, "eval_every", "/train", rc.train.eval_every);
    read_field(t, "peak_lr", "/train", rc.train.peak_lr);
    read_field(t, "warmup_steps", "/train", rc.train.warmup_steps);
    read_field(t, "weight_decay", "/train", rc.train.weight_decay);
    read_field(t, "grad_clip", "/train", rc.train.grad_clip);
    read_field(t, "seed", "/train", rc.train.seed);
    read_field(t, "seq_len", "/train", rc.train.seq_len);
    read_field(t, "train_size", "/train", rc.train.train_size);
    read_field(t, "val_size", "/train", rc.train.val_size);
    read_field(t, "corpus_path", "/train", rc.train.corpus_path);
  }

  if (j.contains("analysis")) {
    const json& a = j["analysis"];
    if (!a.is_object()) throw ConfigError("config: /analysis must be an object");
    check_keys(a, "/analysis", {"relu_p", "sample_items"});
    read_field(a, "relu_p", "/analysis", rc.analysis.relu_p);
    read_field(a, "sample_items", "/analysis", rc.analysis.sample_items);
  }

  if (j.contains("io")) {
    const json& io = j["io"];
    if (!io.is_object()) throw ConfigError("config: /io must be an object");
    check_keys(io, "/io", {"resume_from"});
    read_field(io, "resume_from", "/io", rc.io.resume_from);
  }

  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& rc) {
  json j;
  j["model"] = {{"n_layers", rc.model.n_layers},
                {"d_model", rc.model.d_model},
                {"n_heads", rc.model.n_heads},
                {"d_ff", rc.model.d_ff},
                {"T", rc.model.T},
                {"max_len", rc.model.max_len},
                {"mode", neuron_mode_name(rc.model.mode)},
                {"kv_mode", neuron_mode_name(rc.model.kv_mode)},
                {"k", rc.model.k},
                {"beta", rc.model.beta},
                {"v_reset", rc.model.v_reset},
                {"theta", rc.model.theta},
                {"sg_alpha", rc.model.sg_alpha},
                {"reset_rule", reset_rule_name(rc.model.reset_rule)}};
  j["train"] = {{"task", rc.train.task},
                {"steps", rc.train.steps},
                {"batch_size", rc.train.batch_size},
                {"eval_every", rc.train.eval_every},
                {"peak_lr", rc.train.peak_lr},
                {"warmup_steps", rc.train.warmup_steps},
                {"weight_decay", rc.train.weight_decay},
                {"grad_clip", rc.train.grad_clip},
                {"seed", rc.train.seed},
                {"seq_len", rc.train.seq_len},
                {"train_size", rc.train.train_size},
                {"val_size", rc.train.val_size},
                {"corpus_path", rc.train.corpus_path}};
  j["analysis"] = {{"relu_p", rc.analysis.relu_p}, {"sample_items", rc.analysis.sample_items}};
  j["io"] = {{"resume_from", rc.io.resume_from}};
  return j.dump();
}

}  // namespace bispike
