#include "core/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "core/checkpoint.hpp"
#include "core/common.hpp"
#include "core/gradcheck.hpp"
#include "core/reports.hpp"
#include "core/runconfig.hpp"

namespace bispike {

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  RunConfig rc = load_run_config(config_path);
  // Fully validate the run, data included, before creating any output.
  Task probe_task = make_task(rc.train);
  ModelConfig mcfg = resolve_model_config(rc.model, rc.train, probe_task.train);

  ResumeState resume;
  bool resuming = !rc.io.resume_from.empty();
  if (resuming) resume = restore_training_state(checkpoint_load(rc.io.resume_from));

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output dir: " + out_dir + " (" + ec.message() + ")");

  MetricsWriter metrics(out_dir + "/metrics.csv", spiking_sites(mcfg));
  std::string ckpt_path = out_dir + "/checkpoint.bin";
  std::string config_json = run_config_json(rc);

  TrainSinks sinks;
  sinks.on_eval = [&](const MetricsRow& row) { metrics.write_row(row); };
  sinks.on_checkpoint = [&](const SpikingTransformer& model, const AdamState& opt,
                            int step) {
    checkpoint_save(ckpt_path, make_checkpoint(model, opt, step, config_json));
  };

  TrainResult res = train_loop(rc.model, rc.train, &sinks, resuming ? &resume : nullptr);

  std::cout << "trained " << rc.train.task << " for " << rc.train.steps << " steps: val_loss "
            << fmt_g9(res.final_val_loss) << ", val_metric " << fmt_g9(res.final_val_metric)
            << ", mean firing rate " << fmt_g9(res.rows.empty() ? 0.0
                                                                : res.rows.back().mean_firing_rate)
            << "\noutputs: " << out_dir << "/metrics.csv, " << ckpt_path << "\n";
  return 0;
}

int cmd_analyze(const std::string& kind, const std::string& ckpt_path,
                const std::string& data_path, float k_override,
                const std::string& out_path) {
  if (kind != "firing" && kind != "isometry" && kind != "energy")
    throw ConfigError("analyze: unknown kind '" + kind +
                      "' (want firing | isometry | energy)");

  Checkpoint ck = checkpoint_load(ckpt_path);
  RunConfig rc = parse_run_config(checkpoint_config_json(ck));
  if (!data_path.empty()) rc.train.corpus_path = data_path;

  Task task = make_task(rc.train);
  ModelConfig mcfg = resolve_model_config(rc.model, rc.train, task.val);
  SpikingTransformer model = SpikingTransformer::init(mcfg);

  ResumeState st = restore_training_state(ck);
  for (const auto& name : model.params.names()) {
    auto it = st.params.find(name);
    if (it == st.params.end())
      throw IoError("checkpoint is missing parameter '" + name + "': " + ckpt_path);
    if (!it->second.same_shape(model.params.at(name)))
      throw IoError("checkpoint parameter '" + name + "' has shape " +
                    it->second.shape_str() + ", model wants " +
                    model.params.at(name).shape_str());
    model.params.at(name) = it->second;
  }
  model.alpha = AlphaTable::restore(st.alpha);

  int64_t n_items = std::min<int64_t>(rc.analysis.sample_items,
                                      static_cast<int64_t>(task.val.size()));
  Batch sample = task.val.slice(0, static_cast<size_t>(n_items));

  if (k_override > 0.0f) {
    model.cfg.k = k_override;
    model.alpha = AlphaTable();
    Tape tape;
    ForwardOptions opts;
    opts.calibrate = true;
    opts.require_grad = false;
    model_forward(tape, model, sample, opts);
    model.alpha.freeze();
  }

  ProbeResult pr = probe_model(model, sample);

  std::string doc;
  if (kind == "firing") {
    doc = firing_report_json(model.cfg, pr.rates);
  } else if (kind == "isometry") {
    doc = isometry_report_json(model.cfg, pr.rates, pr.jacs, rc.analysis.relu_p);
  } else {
    doc = energy_report_json(assemble_energy_profile(pr.audit, model.cfg));
  }

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoError("cannot write report: " + out_path);
  out << doc;
  if (!out) throw IoError("short write on report: " + out_path);
  std::cout << "wrote " << kind << " report (" << n_items << " sample items) to " << out_path
            << "\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed, const std::string& inject_fault_op) {
  GradCheckReport report = run_gradcheck(seed, inject_fault_op);
  std::cout << report.table();
  return report.all_pass() ? 0 : 1;
}

}  // namespace bispike
