#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace bispike {

class Tape;

// Lightweight handle into a tape. Copyable; does not own anything.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
};

// One matrix product observed during an instrumented forward pass.
struct MatmulRecord {
  std::string label;
  bool spike_operand = false;  // one operand is ternary spike data
  int64_t m = 0, k = 0, n = 0;
  int64_t macs = 0;   // multiply-accumulates (real-valued operands)
  int64_t acs = 0;    // pure accumulates (fired spike elements x outputs)
  int64_t fired = 0;  // nonzero slots of the spiking operand
  int64_t slots = 0;  // total slots of the spiking operand
};

struct AuditLog {
  std::vector<MatmulRecord> records;
};

// Reverse-mode tape. Nodes are appended in creation order; backward walks
// them in exact reverse creation order, which both fixes the floating-point
// accumulation schedule and makes reruns bit-identical.
class Tape {
 public:
  struct Node {
    const char* op = "";  // canonical op name (fault-hook and audit key)
    std::string label;    // caller-supplied site label, may be empty
    bool needs_grad = false;
    Tensor value;
    std::shared_ptr<const Tensor> spike_codes;  // set on spike-encoder outputs
    float spike_amp = 1.0f;
    std::function<void(Tape&, const Tensor&)> back;
  };

  Var leaf(Tensor value, bool requires_grad = false, const char* label = nullptr);

  // Seeds d(loss)/d(loss) = 1 and propagates. loss must be scalar and live on
  // this tape. A tape runs backward once; further recording or backward calls
  // without a fresh tape raise StateError.
  void backward(const Var& loss);

  bool has_grad(const Var& v) const;
  const Tensor& grad(const Var& v) const;

  const Tensor& value(int32_t id) const { return nodes_.at(id).value; }
  const Node& node(int32_t id) const { return nodes_.at(id); }
  size_t size() const { return nodes_.size(); }
  bool spent() const { return used_; }

  // Node ids in the order backward processed them (tests assert this is the
  // exact reverse of creation order).
  const std::vector<int32_t>& visit_log() const { return visit_log_; }

  // Test hook: scales the upstream gradient entering every node whose op name
  // matches `op` by `factor`. Used by gradcheck fault injection only.
  void set_grad_fault(std::string op, float factor) {
    fault_op_ = std::move(op);
    fault_factor_ = factor;
  }

  // When set, matmul-family ops append MatmulRecords here.
  AuditLog* audit = nullptr;

  // Internal: ops use these.
  Var record(Node node);
  void accum(int32_t id, const Tensor& g);
  void check_open() const;
  void tag_spike(const Var& v, std::shared_ptr<const Tensor> codes, float amplitude);

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
  std::vector<int32_t> visit_log_;
  bool used_ = false;
  std::string fault_op_;
  float fault_factor_ = 1.0f;
};

// --- op catalogue ------------------------------------------------------
// Every op validates shapes, computes its value eagerly and registers a
// backward closure. All outputs are checked finite.

Var matmul(const Var& a, const Var& b, const char* label = nullptr);
// a (m x k) times b-transposed (b is n x k).
Var matmul_nt(const Var& a, const Var& b, const char* label = nullptr);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float c);
Var add_scalar(const Var& a, float c);
Var add_rowvec(const Var& a, const Var& v);  // a (m x n) + v (n) per row

Var clip(const Var& a, float lo, float hi);
Var vabs(const Var& a);
Var vsquare(const Var& a);
Var mean_all(const Var& a);
Var sum_all(const Var& a);
Var mean_rows(const Var& a);  // (m x n) -> (1 x n) column means

Var softmax_rows(const Var& a, bool causal = false);
Var layernorm(const Var& x, const Var& gain, const Var& bias, float eps = 1e-5f);
Var gather_rows(const Var& table, const std::vector<int32_t>& idx);
Var slice_cols(const Var& a, int64_t c0, int64_t c1);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, int64_t r0, int64_t r1);
Var concat_rows(const std::vector<Var>& parts);
// Mean negative log-likelihood over rows; targets are class indices.
Var cross_entropy_logits(const Var& logits, const std::vector<int32_t>& targets);

// Identity forward; backward multiplies the upstream gradient elementwise by
// the local Jacobian diagonal.
Var custom_grad(const Var& value, const Tensor& local_jacobian_diag,
                const char* op_name = "custom_grad");
// Same backward rule, but the forward value is replaced (used by spike
// encoders: the value is the realized spike, the gradient is the
// expectation-path derivative w.r.t. the membrane input).
Var custom_grad_with_value(const Var& input, Tensor value, Tensor local_jacobian_diag,
                           const char* op_name);
// As above and additionally tags the node as ternary spike data.
Var spike_encode(const Var& input, Tensor realized, Tensor local_jacobian_diag,
                 std::shared_ptr<const Tensor> codes, float amplitude,
                 const char* op_name);

// Sparse products over a spike operand: only fired elements contribute, as
// sign-selected accumulation, matching addition-only hardware semantics.
// Gradients use the realized values densely.
Var spike_linear(const Var& s, const Var& w, const Var& b, const char* label = nullptr);
Var spike_matmul_nt(const Var& a, const Var& s, const char* label = nullptr);  // a . s^T
Var spike_matmul(const Var& a, const Var& s, const char* label = nullptr);     // a . s

}  // namespace bispike
