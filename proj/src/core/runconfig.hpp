#pragma once

#include <string>

#include "core/train.hpp"

namespace bispike {

struct AnalysisConfig {
  float relu_p = 0.5f;    // reference ReLU open-probability for isometry reports
  int sample_items = 64;  // validation items probed by analyze
  void validate() const;
};

struct IoConfig {
  std::string resume_from;  // checkpoint path; empty = fresh run
};

// One experiment document: JSON object with sections model / train /
// analysis / io. Only train.task is required; everything else defaults.
// Unknown keys are rejected with their JSON path.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AnalysisConfig analysis;
  IoConfig io;
  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
// Canonical serialization (sorted keys); embedded into checkpoints.
std::string run_config_json(const RunConfig& rc);

std::string neuron_mode_name(NeuronMode m);
NeuronMode neuron_mode_from(const std::string& s, const std::string& path);
std::string reset_rule_name(ResetRule r);
ResetRule reset_rule_from(const std::string& s, const std::string& path);

}  // namespace bispike
