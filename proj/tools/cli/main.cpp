// Command line front end. Links only the C interface.
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "bispike/bispike.h"

namespace {

int report_error(bsk_error* err, int status) {
  if (err) {
    std::fprintf(stderr, "error: %s\n", bsk_error_message(err));
    bsk_error_free(err);
  } else if (status != 0) {
    std::fprintf(stderr, "error: failed with status %d\n", status);
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bispike: elastic bi-spiking network toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(bsk_version()));

  std::string config_path;
  std::string out_dir;
  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  std::string kind;
  std::string ckpt_path;
  std::string data_path;
  float k_override = 0.0f;
  std::string out_path;
  auto* analyze = app.add_subcommand("analyze", "write an analysis report for a checkpoint");
  analyze->add_option("--kind", kind, "firing | isometry | energy")->required();
  analyze->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  analyze->add_option("--data", data_path, "corpus override");
  analyze->add_option("--k", k_override, "recalibrate amplitudes with this k");
  analyze->add_option("--out", out_path, "report file")->required();

  uint64_t seed = 1;
  std::string fault_op;
  auto* gradcheck = app.add_subcommand("gradcheck", "run the gradient self-checks");
  gradcheck->add_option("--seed", seed, "rng seed");
  gradcheck->add_option("--inject-grad-fault", fault_op, "perturb the named op's backward pass")
      ->group("");

  CLI11_PARSE(app, argc, argv);

  bsk_error* err = nullptr;
  if (*train) {
    int status = bsk_train(config_path.c_str(), out_dir.c_str(), &err);
    return report_error(err, status);
  }
  if (*analyze) {
    int status = bsk_analyze(kind.c_str(), ckpt_path.c_str(),
                             data_path.empty() ? nullptr : data_path.c_str(), k_override,
                             out_path.c_str(), &err);
    return report_error(err, status);
  }
  if (*gradcheck) {
    char* report = nullptr;
    int status = bsk_gradcheck(seed, fault_op.empty() ? nullptr : fault_op.c_str(),
                               &report, &err);
    if (report) {
      std::fputs(report, stdout);
      bsk_string_free(report);
    }
    if (err) return report_error(err, status);
    return status;  // plain check failures already speak through the table
  }
  return 0;
}
