#pragma once

#include <cstdint>
#include <string>

namespace bispike {

// Command bodies behind the CLI and the C API. Each throws Error subclasses;
// the exit-code mapping (0 ok, 1 internal, 2 config, 3 numeric, 4 io) happens
// at the boundary via Error::exit_code().

// Runs a config end to end; writes metrics.csv and checkpoint.bin into
// out_dir (checkpoint refreshed at every eval, so a diverged run keeps its
// last good state). Returns 0.
int cmd_train(const std::string& config_path, const std::string& out_dir);

// kind: firing | isometry | energy. data_path overrides the corpus location
// recorded in the checkpoint (required for char_lm checkpoints analyzed on
// another machine). k_override > 0 recalibrates a fresh alpha table on the
// probe sample with that k. Writes a JSON report to out_path. Returns 0.
int cmd_analyze(const std::string& kind, const std::string& ckpt_path,
                const std::string& data_path, float k_override,
                const std::string& out_path);

// Prints the pass/fail table to stdout. Returns 0 when every check passed,
// 1 otherwise. inject_fault_op is the test hook: scale that op's backward
// gradient and watch the harness catch it.
int cmd_gradcheck(uint64_t seed, const std::string& inject_fault_op);

}  // namespace bispike
