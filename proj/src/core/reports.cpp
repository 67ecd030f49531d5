#include "core/reports.hpp"

#include <cstdio>

#include "core/calibration.hpp"
#include "core/common.hpp"
#include "core/runconfig.hpp"
#include "json.hpp"

namespace bispike {

using nlohmann::json;

std::string fmt_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

MetricsWriter::MetricsWriter(const std::string& path, const std::vector<std::string>& sites)
    : out_(path, std::ios::trunc), n_sites_(sites.size()) {
  if (!out_) throw IoError("cannot write metrics: " + path);
  out_ << "# schema: bispike.metrics.v1\n";
  out_ << "step,lr,train_loss,val_loss,val_metric,mean_firing_rate";
  for (const auto& s : sites) out_ << ",r_" << s;
  out_ << "\n";
  out_.flush();
}

void MetricsWriter::write_row(const MetricsRow& row) {
  if (row.site_rates.size() != n_sites_)
    throw StateError("metrics: row has " + std::to_string(row.site_rates.size()) +
                     " site rates, header has " + std::to_string(n_sites_));
  out_ << row.step << ',' << fmt_g9(row.lr) << ',' << fmt_g9(row.train_loss) << ','
       << fmt_g9(row.val_loss) << ',' << fmt_g9(row.val_metric) << ','
       << fmt_g9(row.mean_firing_rate);
  for (double r : row.site_rates) out_ << ',' << fmt_g9(r);
  out_ << "\n";
  out_.flush();
  if (!out_) throw IoError("short write on metrics file");
}

ProbeResult probe_model(SpikingTransformer& model, const Batch& sample) {
  ProbeResult pr;
  Tape tape;
  ForwardHooks hooks;
  hooks.audit = &pr.audit;
  hooks.rates = &pr.rates;
  hooks.jacs = &pr.jacs;
  ForwardOptions opts;
  opts.require_grad = false;
  model_forward(tape, model, sample, opts, &hooks);
  return pr;
}

EnergyProfile assemble_energy_profile(const AuditLog& audit, const ModelConfig& cfg) {
  EnergyProfile prof;
  std::vector<std::string> order;
  std::map<std::string, size_t> index;
  for (const auto& r : audit.records) {
    auto it = index.find(r.label);
    if (it == index.end()) {
      LayerEnergy le;
      le.label = r.label;
      le.site = feeding_site(r.label);
      le.spike = r.spike_operand;
      le.m = r.m;
      le.k = r.k;
      le.n = r.n;
      le.T = label_runs_per_timestep(r.label) ? cfg.T : 1;
      index[r.label] = prof.layers.size();
      prof.layers.push_back(std::move(le));
      it = index.find(r.label);
    }
    LayerEnergy& le = prof.layers[it->second];
    if (le.m != r.m || le.k != r.k || le.n != r.n || le.spike != r.spike_operand)
      throw StateError("energy: product '" + r.label + "' changed shape mid-pass");
    le.calls += 1;
    le.macs += r.macs;
    le.acs += r.acs;
    le.spike_slots += r.slots;
    le.spike_fired += r.fired;
  }
  for (auto& le : prof.layers) {
    if (le.calls % le.T != 0)
      throw StateError("energy: product '" + le.label + "' call count " +
                       std::to_string(le.calls) + " not divisible by T");
    prof.total_macs += le.macs;
    prof.total_acs += le.acs;
  }
  return prof;
}

EnergyProfile model_energy_report(SpikingTransformer& model, const Batch& sample) {
  ProbeResult pr = probe_model(model, sample);
  return assemble_energy_profile(pr.audit, model.cfg);
}

std::string firing_report_json(const ModelConfig& cfg, const SiteStats& rates) {
  json j;
  j["schema_version"] = "bispike.firing.v1";
  j["mode"] = neuron_mode_name(cfg.mode);
  j["kv_mode"] = neuron_mode_name(cfg.kv_mode);
  j["T"] = cfg.T;
  j["k"] = cfg.k;
  j["mean_rate"] = rates.mean_rate();
  j["sites"] = json::array();
  for (const auto& site : spiking_sites(cfg)) {
    double r = rates.site_rate(site);
    auto [h_uni, h_bi] = spike_entropy(r);
    json per_t = json::array();
    for (int t = 0; t < cfg.T; ++t) per_t.push_back(rates.site_rate_at(site, t));
    j["sites"].push_back({{"site", site},
                          {"rate", r},
                          {"per_t", per_t},
                          {"entropy_uni_bits", h_uni},
                          {"entropy_bi_bits", h_bi}});
  }
  return j.dump(2) + "\n";
}

std::string isometry_report_json(const ModelConfig& cfg, const SiteStats& rates,
                                 const JacSamples& jacs, double relu_p) {
  auto [phi_relu, varphi_relu] = relu_isometry_analytic(relu_p);
  json j;
  j["schema_version"] = "bispike.isometry.v1";
  j["mode"] = neuron_mode_name(cfg.mode);
  j["relu_p"] = relu_p;
  j["relu"] = {{"phi", phi_relu}, {"varphi", varphi_relu}};
  j["sites"] = json::array();
  for (const auto& site : spiking_sites(cfg)) {
    auto it = jacs.values.find(site);
    if (it == jacs.values.end() || it->second.empty())
      throw StateError("isometry: no jacobian samples for site '" + site + "'");
    Tensor diag({static_cast<int64_t>(it->second.size())});
    for (size_t i = 0; i < it->second.size(); ++i) diag.at(static_cast<int64_t>(i)) =
        it->second[i];
    auto [phi_emp, varphi_emp] = jacobian_stats_empirical(diag);
    double r = rates.site_rate(site);
    auto [phi_ana, varphi_ana] = spike_isometry_analytic(r);
    Theorem1Result th = theorem1_compare(relu_p, r);
    j["sites"].push_back({{"site", site},
                          {"rate", r},
                          {"samples", it->second.size()},
                          {"phi_empirical", phi_emp},
                          {"varphi_empirical", varphi_emp},
                          {"phi_analytic", phi_ana},
                          {"varphi_analytic", varphi_ana},
                          {"theorem1_holds", th.holds},
                          {"phi_margin", th.phi_margin},
                          {"varphi_margin", th.varphi_margin}});
  }
  return j.dump(2) + "\n";
}

std::string energy_report_json(const EnergyProfile& prof) {
  json j;
  j["schema_version"] = "bispike.energy.v1";
  j["constants_pj"] = {
      {"fp32", {{"ac", energy_ac_pj(Precision::fp32)}, {"mac", energy_mac_pj(Precision::fp32)}}},
      {"fp16", {{"ac", energy_ac_pj(Precision::fp16)}, {"mac", energy_mac_pj(Precision::fp16)}}}};
  j["layers"] = json::array();
  for (const auto& le : prof.layers) {
    j["layers"].push_back({{"label", le.label},
                           {"site", le.site},
                           {"spike", le.spike},
                           {"m", le.m},
                           {"k", le.k},
                           {"n", le.n},
                           {"calls", le.calls},
                           {"T", le.T},
                           {"macs", le.macs},
                           {"acs", le.acs},
                           {"rate", le.rate()},
                           {"fp32_pj", le.energy_pj(Precision::fp32)},
                           {"fp16_pj", le.energy_pj(Precision::fp16)}});
  }
  double fp32 = prof.total_pj(Precision::fp32);
  double fp16 = prof.total_pj(Precision::fp16);
  double ann32 = prof.ann_equiv_pj(Precision::fp32);
  double ann16 = prof.ann_equiv_pj(Precision::fp16);
  j["totals"] = {{"macs", prof.total_macs},
                 {"acs", prof.total_acs},
                 {"fp32_pj", fp32},
                 {"fp16_pj", fp16},
                 {"ann_fp32_pj", ann32},
                 {"ann_fp16_pj", ann16},
                 {"fp32_saving", fp32 > 0.0 ? ann32 / fp32 : 0.0},
                 {"fp16_saving", fp16 > 0.0 ? ann16 / fp16 : 0.0}};
  return j.dump(2) + "\n";
}

}  // namespace bispike
