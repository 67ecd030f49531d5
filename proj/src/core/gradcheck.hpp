#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bispike {

struct GradCheckItem {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct GradCheckReport {
  std::vector<GradCheckItem> items;
  std::string faulted_op;  // nonempty when a gradient fault was injected

  bool all_pass() const;
  int passed() const;
  std::string table() const;  // one [PASS]/[FAIL] line per item + summary
};

// Finite-difference and Monte-Carlo oracles over the encoder rules, every
// tape op, and a small end-to-end model in expectation mode.
// `inject_fault_op` scales the named op's backward gradient by 1.5 on every
// tape the harness builds; the corresponding checks must then fail and name
// the op.
GradCheckReport run_gradcheck(uint64_t seed, const std::string& inject_fault_op = "");

}  // namespace bispike
