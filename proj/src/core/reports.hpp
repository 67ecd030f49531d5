#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "core/analysis.hpp"
#include "core/model.hpp"
#include "core/train.hpp"

namespace bispike {

// Step-series CSV. First line "# schema: bispike.metrics.v1", then the header
// row, then one row per eval. Floats print with %.9g so identical runs are
// byte-comparable.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, const std::vector<std::string>& sites);
  void write_row(const MetricsRow& row);

 private:
  std::ofstream out_;
  size_t n_sites_;
};

std::string fmt_g9(double v);

// One instrumented hard-mode forward over a sample batch.
struct ProbeResult {
  SiteStats rates;
  JacSamples jacs;
  AuditLog audit;
};
ProbeResult probe_model(SpikingTransformer& model, const Batch& sample);

// Folds an audit log into per-label energy rows (uniform dims per label).
EnergyProfile assemble_energy_profile(const AuditLog& audit, const ModelConfig& cfg);
EnergyProfile model_energy_report(SpikingTransformer& model, const Batch& sample);

std::string firing_report_json(const ModelConfig& cfg, const SiteStats& rates);
std::string isometry_report_json(const ModelConfig& cfg, const SiteStats& rates,
                                 const JacSamples& jacs, double relu_p);
std::string energy_report_json(const EnergyProfile& prof);

}  // namespace bispike
