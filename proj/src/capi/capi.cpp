#include "bispike/bispike.h"

#include <cstring>
#include <exception>
#include <string>

#include "core/checkpoint.hpp"
#include "core/commands.hpp"
#include "core/common.hpp"
#include "core/gradcheck.hpp"

struct bsk_error {
  int code;
  std::string message;
};

struct bsk_checkpoint {
  bispike::Checkpoint ck;
};

namespace {

int fail(bsk_error** err, int code, const std::string& msg) {
  if (err) *err = new bsk_error{code, msg};
  return code;
}

template <typename Fn>
int guarded(bsk_error** err, Fn&& fn) {
  if (err) *err = nullptr;
  try {
    return fn();
  } catch (const bispike::Error& e) {
    return fail(err, e.exit_code(), e.what());
  } catch (const std::exception& e) {
    return fail(err, 1, e.what());
  } catch (...) {
    return fail(err, 1, "unknown error");
  }
}

std::string arg_or_empty(const char* s) { return s ? std::string(s) : std::string(); }

}  // namespace

extern "C" {

int bsk_error_code(const bsk_error* err) { return err ? err->code : 0; }

const char* bsk_error_message(const bsk_error* err) {
  return err ? err->message.c_str() : "";
}

void bsk_error_free(bsk_error* err) { delete err; }

const char* bsk_version(void) { return "0.1.0"; }

int bsk_train(const char* config_path, const char* out_dir, bsk_error** err) {
  if (!config_path || !out_dir) return fail(err, 2, "bsk_train: NULL argument");
  return guarded(err, [&] { return bispike::cmd_train(config_path, out_dir); });
}

int bsk_analyze(const char* kind, const char* ckpt_path, const char* data_path,
                float k_override, const char* out_path, bsk_error** err) {
  if (!kind || !ckpt_path || !out_path) return fail(err, 2, "bsk_analyze: NULL argument");
  return guarded(err, [&] {
    return bispike::cmd_analyze(kind, ckpt_path, arg_or_empty(data_path), k_override,
                                out_path);
  });
}

int bsk_gradcheck(uint64_t seed, const char* inject_fault_op, char** report_out,
                  bsk_error** err) {
  if (report_out) *report_out = nullptr;
  return guarded(err, [&] {
    bispike::GradCheckReport report =
        bispike::run_gradcheck(seed, arg_or_empty(inject_fault_op));
    if (report_out) {
      std::string table = report.table();
      *report_out = new char[table.size() + 1];
      std::memcpy(*report_out, table.c_str(), table.size() + 1);
    }
    return report.all_pass() ? 0 : 1;
  });
}

void bsk_string_free(char* s) { delete[] s; }

int bsk_checkpoint_open(const char* path, bsk_checkpoint** out, bsk_error** err) {
  if (!path || !out) return fail(err, 2, "bsk_checkpoint_open: NULL argument");
  *out = nullptr;
  return guarded(err, [&] {
    *out = new bsk_checkpoint{bispike::checkpoint_load(path)};
    return 0;
  });
}

void bsk_checkpoint_close(bsk_checkpoint* ck) { delete ck; }

uint32_t bsk_checkpoint_version(const bsk_checkpoint* ck) {
  return ck ? ck->ck.version : 0;
}

size_t bsk_checkpoint_entry_count(const bsk_checkpoint* ck) {
  return ck ? ck->ck.entries.size() : 0;
}

const char* bsk_checkpoint_entry_name(const bsk_checkpoint* ck, size_t idx) {
  if (!ck || idx >= ck->ck.entries.size()) return nullptr;
  return ck->ck.entries[idx].name.c_str();
}

uint32_t bsk_checkpoint_entry_rank(const bsk_checkpoint* ck, size_t idx) {
  if (!ck || idx >= ck->ck.entries.size()) return 0;
  return static_cast<uint32_t>(ck->ck.entries[idx].dims.size());
}

uint32_t bsk_checkpoint_entry_dim(const bsk_checkpoint* ck, size_t idx, uint32_t d) {
  if (!ck || idx >= ck->ck.entries.size()) return 0;
  const auto& dims = ck->ck.entries[idx].dims;
  return d < dims.size() ? dims[d] : 0;
}

const float* bsk_checkpoint_entry_data(const bsk_checkpoint* ck, size_t idx,
                                       size_t* numel_out) {
  if (numel_out) *numel_out = 0;
  if (!ck || idx >= ck->ck.entries.size()) return nullptr;
  const auto& e = ck->ck.entries[idx];
  if (numel_out) *numel_out = e.data.size();
  return e.data.data();
}

}  // extern "C"
