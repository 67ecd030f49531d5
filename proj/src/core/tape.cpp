#include "core/tape.hpp"

#include <cmath>
#include <utility>

namespace bispike {

const Tensor& Var::val() const {
  if (!valid()) throw StateError("use of an unbound Var");
  return tape->value(id);
}

Var Tape::leaf(Tensor value, bool requires_grad, const char* label) {
  Node n;
  n.op = "leaf";
  if (label) n.label = label;
  n.needs_grad = requires_grad;
  n.value = std::move(value);
  return record(std::move(n));
}

Var Tape::record(Node node) {
  check_open();
  node.value.check_finite(node.label.empty() ? node.op : node.label.c_str());
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

void Tape::check_open() const {
  if (used_)
    throw StateError("stale tape: backward already ran, record on a fresh tape");
}

void Tape::tag_spike(const Var& v, std::shared_ptr<const Tensor> codes, float amplitude) {
  Node& n = nodes_.at(v.id);
  n.spike_codes = std::move(codes);
  n.spike_amp = amplitude;
}

void Tape::accum(int32_t id, const Tensor& g) {
  if (!nodes_[id].needs_grad) return;
  if (!has_grad_[id]) {
    grads_[id] = g;
    has_grad_[id] = 1;
    return;
  }
  Tensor& dst = grads_[id];
  if (!dst.same_shape(g))
    throw ShapeError("gradient accumulation shape mismatch " + dst.shape_str() +
                     " vs " + g.shape_str());
  for (int64_t i = 0; i < dst.numel(); ++i) dst.at(i) += g.at(i);
}

void Tape::backward(const Var& loss) {
  if (loss.tape != this) throw StateError("backward: loss does not live on this tape");
  check_open();
  if (!nodes_.at(loss.id).value.is_scalar())
    throw StateError("backward: loss must be scalar, got shape " +
                     nodes_[loss.id].value.shape_str());
  used_ = true;
  grads_.assign(nodes_.size(), Tensor{});
  has_grad_.assign(nodes_.size(), 0);
  visit_log_.clear();
  if (!nodes_[loss.id].needs_grad) return;
  grads_[loss.id] = Tensor::scalar(1.0f);
  has_grad_[loss.id] = 1;
  for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
    if (!has_grad_[i] || !nodes_[i].back) continue;
    visit_log_.push_back(i);
    if (!fault_op_.empty() && fault_op_ == nodes_[i].op) {
      Tensor g = grads_[i];
      for (int64_t j = 0; j < g.numel(); ++j) g.at(j) *= fault_factor_;
      nodes_[i].back(*this, g);
    } else {
      nodes_[i].back(*this, grads_[i]);
    }
  }
}

bool Tape::has_grad(const Var& v) const {
  if (v.tape != this) return false;
  return !has_grad_.empty() && has_grad_.at(v.id);
}

const Tensor& Tape::grad(const Var& v) const {
  if (v.tape != this) throw StateError("grad: Var does not live on this tape");
  if (grads_.empty()) throw StateError("grad: backward has not run");
  if (!has_grad_.at(v.id))
    throw StateError("grad: no gradient reached node " + std::to_string(v.id));
  return grads_[v.id];
}

namespace {

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape != b.tape)
    throw StateError(std::string(op) + ": operands must live on one tape");
}

// Reference accumulation kernels. All accumulate per output element in a
// double, walking the contraction index in ascending order; the schedule is
// part of the determinism contract.
Tensor mm_nn(const Tensor& a, const Tensor& b) {
  int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  std::vector<double> acc(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int64_t kk = 0; kk < k; ++kk) {
      double aik = a.at2(i, kk);
      const float* brow = b.data() + kk * n;
      for (int64_t j = 0; j < n; ++j) acc[j] += aik * static_cast<double>(brow[j]);
    }
    for (int64_t j = 0; j < n; ++j) out.at2(i, j) = static_cast<float>(acc[j]);
  }
  return out;
}

// a (m x k) . b^T where b is (n x k).
Tensor mm_nt(const Tensor& a, const Tensor& b) {
  int64_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a.data() + i * k;
    for (int64_t j = 0; j < n; ++j) {
      const float* brow = b.data() + j * k;
      double acc = 0.0;
      for (int64_t kk = 0; kk < k; ++kk)
        acc += static_cast<double>(arow[kk]) * static_cast<double>(brow[kk]);
      out.at2(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

// a^T . b where a is (k x m), b is (k x n).
Tensor mm_tn(const Tensor& a, const Tensor& b) {
  int64_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor out({m, n});
  std::vector<double> acc(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int64_t kk = 0; kk < k; ++kk) {
      double aki = a.at2(kk, i);
      const float* brow = b.data() + kk * n;
      for (int64_t j = 0; j < n; ++j) acc[j] += aki * static_cast<double>(brow[j]);
    }
    for (int64_t j = 0; j < n; ++j) out.at2(i, j) = static_cast<float>(acc[j]);
  }
  return out;
}

Tensor colsum(const Tensor& g) {
  int64_t m = g.rows(), n = g.cols();
  Tensor out({n});
  std::vector<double> acc(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) acc[j] += g.at2(i, j);
  for (int64_t j = 0; j < n; ++j) out.at(j) = static_cast<float>(acc[j]);
  return out;
}

Var unary(const Var& a, const char* op, Tensor value,
          std::function<void(Tape&, const Tensor&)> back) {
  Tape::Node n;
  n.op = op;
  n.needs_grad = a.tape->node(a.id).needs_grad;
  n.value = std::move(value);
  if (n.needs_grad) n.back = std::move(back);
  return a.tape->record(std::move(n));
}

int64_t spike_nnz(const Tensor& codes) {
  int64_t nnz = 0;
  for (int64_t i = 0; i < codes.numel(); ++i)
    if (codes.at(i) != 0.0f) ++nnz;
  return nnz;
}

}  // namespace

Var matmul(const Var& a, const Var& b, const char* label) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    throw ShapeError("matmul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Tape* t = a.tape;
  if (t->audit) {
    const auto& an = t->node(a.id);
    const auto& bn = t->node(b.id);
    MatmulRecord r;
    r.label = label ? label : "matmul";
    r.spike_operand = (an.spike_codes != nullptr) || (bn.spike_codes != nullptr);
    r.m = av.rows();
    r.k = av.cols();
    r.n = bv.cols();
    r.macs = r.m * r.k * r.n;
    t->audit->records.push_back(std::move(r));
  }
  Tape::Node n;
  n.op = "matmul";
  if (label) n.label = label;
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  n.value = mm_nn(av, bv);
  if (n.needs_grad) {
    Tensor ac = av, bc = bv;
    int32_t aid = a.id, bid = b.id;
    n.back = [ac, bc, aid, bid](Tape& tp, const Tensor& g) {
      tp.accum(aid, mm_nt(g, bc));
      tp.accum(bid, mm_tn(ac, g));
    };
  }
  return t->record(std::move(n));
}

Var matmul_nt(const Var& a, const Var& b, const char* label) {
  require_same_tape(a, b, "matmul_nt");
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols())
    throw ShapeError("matmul_nt: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Tape* t = a.tape;
  if (t->audit) {
    MatmulRecord r;
    r.label = label ? label : "matmul_nt";
    r.spike_operand = (t->node(a.id).spike_codes != nullptr) ||
                      (t->node(b.id).spike_codes != nullptr);
    r.m = av.rows();
    r.k = av.cols();
    r.n = bv.rows();
    r.macs = r.m * r.k * r.n;
    t->audit->records.push_back(std::move(r));
  }
  Tape::Node n;
  n.op = "matmul_nt";
  if (label) n.label = label;
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  n.value = mm_nt(av, bv);
  if (n.needs_grad) {
    Tensor ac = av, bc = bv;
    int32_t aid = a.id, bid = b.id;
    n.back = [ac, bc, aid, bid](Tape& tp, const Tensor& g) {
      tp.accum(aid, mm_nn(g, bc));
      tp.accum(bid, mm_tn(g, ac));
    };
  }
  return t->record(std::move(n));
}

namespace {
Var binary_elementwise(const Var& a, const Var& b, const char* op,
                       float (*fwd)(float, float),
                       void (*bwd)(Tape&, int32_t, int32_t, const Tensor&, const Tensor&,
                                   const Tensor&)) {
  require_same_tape(a, b, op);
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (!av.same_shape(bv))
    throw ShapeError(std::string(op) + ": shape mismatch " + av.shape_str() + " vs " +
                     bv.shape_str());
  Tape* t = a.tape;
  Tensor out(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) out.at(i) = fwd(av.at(i), bv.at(i));
  Tape::Node n;
  n.op = op;
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  n.value = std::move(out);
  if (n.needs_grad) {
    Tensor ac = av, bc = bv;
    int32_t aid = a.id, bid = b.id;
    n.back = [ac, bc, aid, bid, bwd](Tape& tp, const Tensor& g) {
      bwd(tp, aid, bid, ac, bc, g);
    };
  }
  return t->record(std::move(n));
}
}  // namespace

Var add(const Var& a, const Var& b) {
  return binary_elementwise(
      a, b, "add", [](float x, float y) { return x + y; },
      [](Tape& tp, int32_t aid, int32_t bid, const Tensor&, const Tensor&, const Tensor& g) {
        tp.accum(aid, g);
        tp.accum(bid, g);
      });
}

Var sub(const Var& a, const Var& b) {
  return binary_elementwise(
      a, b, "sub", [](float x, float y) { return x - y; },
      [](Tape& tp, int32_t aid, int32_t bid, const Tensor&, const Tensor&, const Tensor& g) {
        tp.accum(aid, g);
        Tensor ng(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) ng.at(i) = -g.at(i);
        tp.accum(bid, ng);
      });
}

Var mul(const Var& a, const Var& b) {
  return binary_elementwise(
      a, b, "mul", [](float x, float y) { return x * y; },
      [](Tape& tp, int32_t aid, int32_t bid, const Tensor& ac, const Tensor& bc,
         const Tensor& g) {
        Tensor ga(g.shape()), gb(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) {
          ga.at(i) = g.at(i) * bc.at(i);
          gb.at(i) = g.at(i) * ac.at(i);
        }
        tp.accum(aid, ga);
        tp.accum(bid, gb);
      });
}

Var scale(const Var& a, float c) {
  const Tensor& av = a.val();
  Tensor out(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) out.at(i) = av.at(i) * c;
  int32_t aid = a.id;
  return unary(a, "scale", std::move(out), [aid, c](Tape& tp, const Tensor& g) {
    Tensor ga(g.shape());
    for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) = g.at(i) * c;
    tp.accum(aid, ga);
  });
}

Var add_scalar(const Var& a, float c) {
  const Tensor& av = a.val();
  Tensor out(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) out.at(i) = av.at(i) + c;
  int32_t aid = a.id;
  return unary(a, "add_scalar", std::move(out),
               [aid](Tape& tp, const Tensor& g) { tp.accum(aid, g); });
}

Var add_rowvec(const Var& a, const Var& v) {
  require_same_tape(a, v, "add_rowvec");
  const Tensor& av = a.val();
  const Tensor& vv = v.val();
  if (av.rank() != 2 || vv.rank() != 1 || vv.dim(0) != av.cols())
    throw ShapeError("add_rowvec: shape mismatch " + av.shape_str() + " vs " + vv.shape_str());
  Tensor out(av.shape());
  for (int64_t i = 0; i < av.rows(); ++i)
    for (int64_t j = 0; j < av.cols(); ++j) out.at2(i, j) = av.at2(i, j) + vv.at(j);
  Tape* t = a.tape;
  Tape::Node n;
  n.op = "add_rowvec";
  n.needs_grad = t->node(a.id).needs_grad || t->node(v.id).needs_grad;
  n.value = std::move(out);
  if (n.needs_grad) {
    int32_t aid = a.id, vid = v.id;
    n.back = [aid, vid](Tape& tp, const Tensor& g) {
      tp.accum(aid, g);
      tp.accum(vid, colsum(g));
    };
  }
  return t->record(std::move(n));
}

Var clip(const Var& a, float lo, float hi) {
  if (!(lo < hi))
    throw StateError("clip: lo must be < hi, got lo=" + std::to_string(lo) +
                     " hi=" + std::to_string(hi));
  const Tensor& av = a.val();
  Tensor out(av.shape());
  Tensor mask(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) {
    float x = av.at(i);
    out.at(i) = x < lo ? lo : (x > hi ? hi : x);
    // Gradient is 1 strictly inside (lo, hi) and exactly 0 at the breakpoints.
    mask.at(i) = (x > lo && x < hi) ? 1.0f : 0.0f;
  }
  int32_t aid = a.id;
  return unary(a, "clip", std::move(out), [aid, mask](Tape& tp, const Tensor& g) {
    Tensor ga(g.shape());
    for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) = g.at(i) * mask.at(i);
    tp.accum(aid, ga);
  });
}

Var vabs(const Var& a) {
  const Tensor& av = a.val();
  Tensor out(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) out.at(i) = std::fabs(av.at(i));
  Tensor sign(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i)
    sign.at(i) = av.at(i) > 0.0f ? 1.0f : (av.at(i) < 0.0f ? -1.0f : 0.0f);
  int32_t aid = a.id;
  return unary(a, "abs", std::move(out), [aid, sign](Tape& tp, const Tensor& g) {
    Tensor ga(g.shape());
    for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) = g.at(i) * sign.at(i);
    tp.accum(aid, ga);
  });
}

Var vsquare(const Var& a) {
  const Tensor& av = a.val();
  Tensor out(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) out.at(i) = av.at(i) * av.at(i);
  Tensor ac = av;
  int32_t aid = a.id;
  return unary(a, "square", std::move(out), [aid, ac](Tape& tp, const Tensor& g) {
    Tensor ga(g.shape());
    for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) = 2.0f * ac.at(i) * g.at(i);
    tp.accum(aid, ga);
  });
}

Var mean_all(const Var& a) {
  const Tensor& av = a.val();
  if (av.numel() == 0) throw ShapeError("mean_all: empty tensor");
  double acc = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) acc += av.at(i);
  int64_t n = av.numel();
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  int32_t aid = a.id;
  auto shape = av.shape();
  return unary(a, "mean_all", std::move(out), [aid, shape, n](Tape& tp, const Tensor& g) {
    Tensor ga(shape);
    float gg = g.at(0) / static_cast<float>(n);
    for (int64_t i = 0; i < ga.numel(); ++i) ga.at(i) = gg;
    tp.accum(aid, ga);
  });
}

Var sum_all(const Var& a) {
  const Tensor& av = a.val();
  double acc = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) acc += av.at(i);
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  int32_t aid = a.id;
  auto shape = av.shape();
  return unary(a, "sum_all", std::move(out), [aid, shape](Tape& tp, const Tensor& g) {
    Tensor ga(shape);
    for (int64_t i = 0; i < ga.numel(); ++i) ga.at(i) = g.at(0);
    tp.accum(aid, ga);
  });
}

Var mean_rows(const Var& a) {
  const Tensor& av = a.val();
  int64_t m = av.rows(), n = av.cols();
  if (m == 0) throw ShapeError("mean_rows: empty tensor");
  Tensor out({1, n});
  std::vector<double> acc(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) acc[j] += av.at2(i, j);
  for (int64_t j = 0; j < n; ++j)
    out.at2(0, j) = static_cast<float>(acc[j] / static_cast<double>(m));
  int32_t aid = a.id;
  return unary(a, "mean_rows", std::move(out), [aid, m, n](Tape& tp, const Tensor& g) {
    Tensor ga({m, n});
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) ga.at2(i, j) = g.at2(0, j) / static_cast<float>(m);
    tp.accum(aid, ga);
  });
}

Var softmax_rows(const Var& a, bool causal) {
  const Tensor& av = a.val();
  int64_t m = av.rows(), n = av.cols();
  if (causal && m > n)
    throw ShapeError("softmax_rows: causal mask needs cols >= rows, got " + av.shape_str());
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    int64_t lim = causal ? i + 1 : n;
    double mx = av.at2(i, 0);
    for (int64_t j = 1; j < lim; ++j) mx = std::max(mx, static_cast<double>(av.at2(i, j)));
    double sum = 0.0;
    std::vector<double> e(static_cast<size_t>(lim));
    for (int64_t j = 0; j < lim; ++j) {
      e[j] = std::exp(static_cast<double>(av.at2(i, j)) - mx);
      sum += e[j];
    }
    for (int64_t j = 0; j < lim; ++j) out.at2(i, j) = static_cast<float>(e[j] / sum);
    for (int64_t j = lim; j < n; ++j) out.at2(i, j) = 0.0f;
  }
  Tensor y = out;
  int32_t aid = a.id;
  return unary(a, "softmax_rows", std::move(out), [aid, y, m, n](Tape& tp, const Tensor& g) {
    Tensor ga({m, n});
    for (int64_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j)
        dot += static_cast<double>(g.at2(i, j)) * static_cast<double>(y.at2(i, j));
      for (int64_t j = 0; j < n; ++j)
        ga.at2(i, j) = static_cast<float>(
            static_cast<double>(y.at2(i, j)) * (static_cast<double>(g.at2(i, j)) - dot));
    }
    tp.accum(aid, ga);
  });
}

Var layernorm(const Var& x, const Var& gain, const Var& bias, float eps) {
  require_same_tape(x, gain, "layernorm");
  require_same_tape(x, bias, "layernorm");
  const Tensor& xv = x.val();
  const Tensor& gv = gain.val();
  const Tensor& bv = bias.val();
  int64_t m = xv.rows(), n = xv.cols();
  if (gv.rank() != 1 || bv.rank() != 1 || gv.dim(0) != n || bv.dim(0) != n)
    throw ShapeError("layernorm: gain/bias must be [" + std::to_string(n) + "]");
  Tensor out({m, n});
  Tensor xhat({m, n});
  std::vector<double> inv(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += xv.at2(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      double d = xv.at2(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv[i] = 1.0 / std::sqrt(var + static_cast<double>(eps));
    for (int64_t j = 0; j < n; ++j) {
      double xh = (xv.at2(i, j) - mu) * inv[i];
      xhat.at2(i, j) = static_cast<float>(xh);
      out.at2(i, j) = static_cast<float>(xh * gv.at(j) + bv.at(j));
    }
  }
  Tape* t = x.tape;
  Tape::Node nd;
  nd.op = "layernorm";
  nd.needs_grad = t->node(x.id).needs_grad || t->node(gain.id).needs_grad ||
                  t->node(bias.id).needs_grad;
  nd.value = std::move(out);
  if (nd.needs_grad) {
    Tensor gc = gv;
    int32_t xid = x.id, gid = gain.id, bid = bias.id;
    nd.back = [xhat, inv, gc, xid, gid, bid, m, n](Tape& tp, const Tensor& g) {
      Tensor gx({m, n});
      Tensor gg({n}), gb({n});
      std::vector<double> gga(static_cast<size_t>(n), 0.0), gba(static_cast<size_t>(n), 0.0);
      for (int64_t i = 0; i < m; ++i) {
        double a = 0.0, b = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          double h = static_cast<double>(g.at2(i, j)) * static_cast<double>(gc.at(j));
          a += h;
          b += h * static_cast<double>(xhat.at2(i, j));
        }
        a /= static_cast<double>(n);
        b /= static_cast<double>(n);
        for (int64_t j = 0; j < n; ++j) {
          double h = static_cast<double>(g.at2(i, j)) * static_cast<double>(gc.at(j));
          gx.at2(i, j) = static_cast<float>(inv[i] * (h - a - static_cast<double>(xhat.at2(i, j)) * b));
          gga[j] += static_cast<double>(g.at2(i, j)) * static_cast<double>(xhat.at2(i, j));
          gba[j] += g.at2(i, j);
        }
      }
      for (int64_t j = 0; j < n; ++j) {
        gg.at(j) = static_cast<float>(gga[j]);
        gb.at(j) = static_cast<float>(gba[j]);
      }
      tp.accum(xid, gx);
      tp.accum(gid, gg);
      tp.accum(bid, gb);
    };
  }
  return t->record(std::move(nd));
}

Var gather_rows(const Var& table, const std::vector<int32_t>& idx) {
  const Tensor& tv = table.val();
  int64_t v = tv.rows(), d = tv.cols();
  for (int32_t ix : idx)
    if (ix < 0 || ix >= v)
      throw StateError("gather_rows: index " + std::to_string(ix) +
                       " out of table rows " + std::to_string(v));
  int64_t n = static_cast<int64_t>(idx.size());
  Tensor out({n, d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out.at2(i, j) = tv.at2(idx[i], j);
  int32_t tid = table.id;
  auto tshape = tv.shape();
  return unary(table, "gather_rows", std::move(out),
               [tid, idx, tshape, d](Tape& tp, const Tensor& g) {
                 Tensor gt(tshape);
                 for (size_t i = 0; i < idx.size(); ++i)
                   for (int64_t j = 0; j < d; ++j)
                     gt.at2(idx[i], j) += g.at2(static_cast<int64_t>(i), j);
                 tp.accum(tid, gt);
               });
}

Var slice_cols(const Var& a, int64_t c0, int64_t c1) {
  const Tensor& av = a.val();
  int64_t m = av.rows(), n = av.cols();
  if (c0 < 0 || c1 <= c0 || c1 > n)
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") for " + av.shape_str());
  int64_t w = c1 - c0;
  Tensor out({m, w});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < w; ++j) out.at2(i, j) = av.at2(i, c0 + j);
  Tape* t = a.tape;
  Tape::Node nd;
  nd.op = "slice_cols";
  nd.needs_grad = t->node(a.id).needs_grad;
  nd.value = std::move(out);
  const auto& an = t->node(a.id);
  if (an.spike_codes) {
    auto sc = std::make_shared<Tensor>(Tensor({m, w}));
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < w; ++j) sc->at2(i, j) = an.spike_codes->at2(i, c0 + j);
    nd.spike_codes = std::move(sc);
    nd.spike_amp = an.spike_amp;
  }
  if (nd.needs_grad) {
    int32_t aid = a.id;
    nd.back = [aid, m, n, c0, w](Tape& tp, const Tensor& g) {
      Tensor ga({m, n});
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < w; ++j) ga.at2(i, c0 + j) = g.at2(i, j);
      tp.accum(aid, ga);
    };
  }
  return t->record(std::move(nd));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape* t = parts[0].tape;
  int64_t m = parts[0].val().rows();
  int64_t n = 0;
  bool needs = false, all_spike = true;
  float amp = t->node(parts[0].id).spike_amp;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_cols");
    if (p.val().rows() != m)
      throw ShapeError("concat_cols: row mismatch " + p.val().shape_str());
    n += p.val().cols();
    needs = needs || t->node(p.id).needs_grad;
    const auto& pn = t->node(p.id);
    if (!pn.spike_codes || pn.spike_amp != amp) all_spike = false;
  }
  Tensor out({m, n});
  std::shared_ptr<Tensor> codes;
  if (all_spike) codes = std::make_shared<Tensor>(Tensor({m, n}));
  int64_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.val();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < pv.cols(); ++j) {
        out.at2(i, off + j) = pv.at2(i, j);
        if (codes) codes->at2(i, off + j) = t->node(p.id).spike_codes->at2(i, j);
      }
    off += pv.cols();
  }
  Tape::Node nd;
  nd.op = "concat_cols";
  nd.needs_grad = needs;
  nd.value = std::move(out);
  if (codes) {
    nd.spike_codes = codes;
    nd.spike_amp = amp;
  }
  if (needs) {
    std::vector<int32_t> ids;
    std::vector<int64_t> widths;
    for (const Var& p : parts) {
      ids.push_back(p.id);
      widths.push_back(p.val().cols());
    }
    nd.back = [ids, widths, m](Tape& tp, const Tensor& g) {
      int64_t off = 0;
      for (size_t k = 0; k < ids.size(); ++k) {
        Tensor gp({m, widths[k]});
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < widths[k]; ++j) gp.at2(i, j) = g.at2(i, off + j);
        tp.accum(ids[k], gp);
        off += widths[k];
      }
    };
  }
  return t->record(std::move(nd));
}

Var slice_rows(const Var& a, int64_t r0, int64_t r1) {
  const Tensor& av = a.val();
  int64_t m = av.rows(), n = av.cols();
  if (r0 < 0 || r1 <= r0 || r1 > m)
    throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") for " + av.shape_str());
  int64_t h = r1 - r0;
  Tensor out({h, n});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < n; ++j) out.at2(i, j) = av.at2(r0 + i, j);
  Tape* t = a.tape;
  Tape::Node nd;
  nd.op = "slice_rows";
  nd.needs_grad = t->node(a.id).needs_grad;
  nd.value = std::move(out);
  const auto& an = t->node(a.id);
  if (an.spike_codes) {
    auto sc = std::make_shared<Tensor>(Tensor({h, n}));
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < n; ++j) sc->at2(i, j) = an.spike_codes->at2(r0 + i, j);
    nd.spike_codes = std::move(sc);
    nd.spike_amp = an.spike_amp;
  }
  if (nd.needs_grad) {
    int32_t aid = a.id;
    nd.back = [aid, m, n, r0, h](Tape& tp, const Tensor& g) {
      Tensor ga({m, n});
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < n; ++j) ga.at2(r0 + i, j) = g.at2(i, j);
      tp.accum(aid, ga);
    };
  }
  return t->record(std::move(nd));
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape* t = parts[0].tape;
  int64_t n = parts[0].val().cols();
  int64_t m = 0;
  bool needs = false, all_spike = true;
  float amp = t->node(parts[0].id).spike_amp;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_rows");
    if (p.val().cols() != n)
      throw ShapeError("concat_rows: column mismatch " + p.val().shape_str());
    m += p.val().rows();
    needs = needs || t->node(p.id).needs_grad;
    const auto& pn = t->node(p.id);
    if (!pn.spike_codes || pn.spike_amp != amp) all_spike = false;
  }
  Tensor out({m, n});
  std::shared_ptr<Tensor> codes;
  if (all_spike) codes = std::make_shared<Tensor>(Tensor({m, n}));
  int64_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.val();
    for (int64_t i = 0; i < pv.rows(); ++i)
      for (int64_t j = 0; j < n; ++j) {
        out.at2(off + i, j) = pv.at2(i, j);
        if (codes) codes->at2(off + i, j) = t->node(p.id).spike_codes->at2(i, j);
      }
    off += pv.rows();
  }
  Tape::Node nd;
  nd.op = "concat_rows";
  nd.needs_grad = needs;
  nd.value = std::move(out);
  if (codes) {
    nd.spike_codes = codes;
    nd.spike_amp = amp;
  }
  if (needs) {
    std::vector<int32_t> ids;
    std::vector<int64_t> heights;
    for (const Var& p : parts) {
      ids.push_back(p.id);
      heights.push_back(p.val().rows());
    }
    nd.back = [ids, heights, n](Tape& tp, const Tensor& g) {
      int64_t off = 0;
      for (size_t kk = 0; kk < ids.size(); ++kk) {
        Tensor gp({heights[kk], n});
        for (int64_t i = 0; i < heights[kk]; ++i)
          for (int64_t j = 0; j < n; ++j) gp.at2(i, j) = g.at2(off + i, j);
        tp.accum(ids[kk], gp);
        off += heights[kk];
      }
    };
  }
  return t->record(std::move(nd));
}

Var cross_entropy_logits(const Var& logits, const std::vector<int32_t>& targets) {
  const Tensor& lv = logits.val();
  int64_t m = lv.rows(), c = lv.cols();
  if (static_cast<int64_t>(targets.size()) != m)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(m) + " rows");
  for (int32_t tgt : targets)
    if (tgt < 0 || tgt >= c)
      throw StateError("cross_entropy: target " + std::to_string(tgt) +
                       " out of range [0," + std::to_string(c) + ")");
  Tensor probs({m, c});
  double loss = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    double mx = lv.at2(i, 0);
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(lv.at2(i, j)));
    double sum = 0.0;
    for (int64_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(lv.at2(i, j)) - mx);
    double logz = std::log(sum) + mx;
    for (int64_t j = 0; j < c; ++j)
      probs.at2(i, j) = static_cast<float>(std::exp(static_cast<double>(lv.at2(i, j)) - logz));
    loss += logz - static_cast<double>(lv.at2(i, targets[i]));
  }
  Tensor out = Tensor::scalar(static_cast<float>(loss / static_cast<double>(m)));
  int32_t lid = logits.id;
  return unary(logits, "cross_entropy", std::move(out),
               [lid, probs, targets, m, c](Tape& tp, const Tensor& g) {
                 Tensor gl({m, c});
                 float s = g.at(0) / static_cast<float>(m);
                 for (int64_t i = 0; i < m; ++i)
                   for (int64_t j = 0; j < c; ++j) {
                     float p = probs.at2(i, j) - (targets[i] == j ? 1.0f : 0.0f);
                     gl.at2(i, j) = s * p;
                   }
                 tp.accum(lid, gl);
               });
}

Var custom_grad(const Var& value, const Tensor& local_jacobian_diag, const char* op_name) {
  return custom_grad_with_value(value, value.val(), local_jacobian_diag, op_name);
}

Var custom_grad_with_value(const Var& input, Tensor value, Tensor local_jacobian_diag,
                           const char* op_name) {
  if (!input.valid()) throw StateError("custom_grad: unbound input");
  if (!value.same_shape(local_jacobian_diag))
    throw ShapeError("custom_grad: value shape " + value.shape_str() +
                     " does not match jacobian shape " + local_jacobian_diag.shape_str());
  if (!value.same_shape(input.val()))
    throw ShapeError("custom_grad: value shape " + value.shape_str() +
                     " does not match input shape " + input.val().shape_str());
  Tape* t = input.tape;
  Tape::Node n;
  n.op = op_name;
  n.needs_grad = t->node(input.id).needs_grad;
  n.value = std::move(value);
  if (n.needs_grad) {
    Tensor jac = std::move(local_jacobian_diag);
    int32_t iid = input.id;
    n.back = [iid, jac](Tape& tp, const Tensor& g) {
      Tensor gi(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) gi.at(i) = g.at(i) * jac.at(i);
      tp.accum(iid, gi);
    };
  }
  return t->record(std::move(n));
}

Var spike_encode(const Var& input, Tensor realized, Tensor local_jacobian_diag,
                 std::shared_ptr<const Tensor> codes, float amplitude, const char* op_name) {
  Var v = custom_grad_with_value(input, std::move(realized), std::move(local_jacobian_diag),
                                 op_name);
  v.tape->tag_spike(v, std::move(codes), amplitude);
  return v;
}

Var spike_linear(const Var& s, const Var& w, const Var& b, const char* label) {
  require_same_tape(s, w, "spike_linear");
  require_same_tape(s, b, "spike_linear");
  Tape* t = s.tape;
  const Tape::Node& sn = t->node(s.id);
  if (!sn.spike_codes) throw StateError("spike_linear: operand is not spike data");
  const Tensor& codes = *sn.spike_codes;
  float amp = sn.spike_amp;
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  int64_t m = codes.rows(), k = codes.cols();
  if (wv.rank() != 2 || wv.rows() != k)
    throw ShapeError("spike_linear: shape mismatch " + codes.shape_str() + " vs " +
                     wv.shape_str());
  int64_t n = wv.cols();
  if (bv.rank() != 1 || bv.dim(0) != n)
    throw ShapeError("spike_linear: bias must be [" + std::to_string(n) + "]");

  // Accumulate-only forward: walk fired inputs in ascending index order and
  // add the sign-selected realized row of W. Each term is rounded to f32
  // before the double accumulate so folding amp into W reproduces the exact
  // same term sequence.
  Tensor out({m, n});
  int64_t fired = 0;
  std::vector<double> acc(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) acc[j] = static_cast<double>(bv.at(j));
    for (int64_t kk = 0; kk < k; ++kk) {
      float code = codes.at2(i, kk);
      if (code == 0.0f) continue;
      ++fired;
      float rv = code * amp;
      const float* wrow = wv.data() + kk * n;
      for (int64_t j = 0; j < n; ++j)
        acc[j] += static_cast<double>(rv * wrow[j]);
    }
    for (int64_t j = 0; j < n; ++j) out.at2(i, j) = static_cast<float>(acc[j]);
  }
  if (t->audit) {
    MatmulRecord r;
    r.label = label ? label : "spike_linear";
    r.spike_operand = true;
    r.m = m;
    r.k = k;
    r.n = n;
    r.acs = fired * n;
    r.fired = fired;
    r.slots = m * k;
    t->audit->records.push_back(std::move(r));
  }
  Tape::Node nd;
  nd.op = "spike_linear";
  if (label) nd.label = label;
  nd.needs_grad = sn.needs_grad || t->node(w.id).needs_grad || t->node(b.id).needs_grad;
  nd.value = std::move(out);
  if (nd.needs_grad) {
    Tensor sv = s.val(), wc = wv;
    int32_t sid = s.id, wid = w.id, bid = b.id;
    nd.back = [sv, wc, sid, wid, bid](Tape& tp, const Tensor& g) {
      tp.accum(sid, mm_nt(g, wc));
      tp.accum(wid, mm_tn(sv, g));
      tp.accum(bid, colsum(g));
    };
  }
  return t->record(std::move(nd));
}

Var spike_matmul_nt(const Var& a, const Var& s, const char* label) {
  require_same_tape(a, s, "spike_matmul_nt");
  Tape* t = a.tape;
  const Tape::Node& sn = t->node(s.id);
  if (!sn.spike_codes) throw StateError("spike_matmul_nt: operand is not spike data");
  const Tensor& codes = *sn.spike_codes;
  float amp = sn.spike_amp;
  const Tensor& av = a.val();
  int64_t m = av.rows(), k = av.cols(), n = codes.rows();
  if (codes.cols() != k)
    throw ShapeError("spike_matmul_nt: shape mismatch " + av.shape_str() + " vs " +
                     codes.shape_str());
  Tensor out({m, n});
  int64_t fired = 0;
  for (int64_t j = 0; j < n; ++j) {
    for (int64_t kk = 0; kk < k; ++kk) {
      float code = codes.at2(j, kk);
      if (code != 0.0f) ++fired;
    }
  }
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = av.data() + i * k;
    for (int64_t j = 0; j < n; ++j) {
      const float* crow = codes.data() + j * k;
      double acc = 0.0;
      for (int64_t kk = 0; kk < k; ++kk) {
        float code = crow[kk];
        if (code == 0.0f) continue;
        acc += static_cast<double>(arow[kk]) * static_cast<double>(code * amp);
      }
      out.at2(i, j) = static_cast<float>(acc);
    }
  }
  if (t->audit) {
    MatmulRecord r;
    r.label = label ? label : "spike_matmul_nt";
    r.spike_operand = true;
    r.m = m;
    r.k = k;
    r.n = n;
    r.acs = fired * m;
    r.fired = fired;
    r.slots = n * k;
    t->audit->records.push_back(std::move(r));
  }
  Tape::Node nd;
  nd.op = "spike_matmul_nt";
  if (label) nd.label = label;
  nd.needs_grad = t->node(a.id).needs_grad || sn.needs_grad;
  nd.value = std::move(out);
  if (nd.needs_grad) {
    Tensor ac = av, sv = s.val();
    int32_t aid = a.id, sid = s.id;
    nd.back = [ac, sv, aid, sid](Tape& tp, const Tensor& g) {
      tp.accum(aid, mm_nn(g, sv));
      tp.accum(sid, mm_tn(g, ac));
    };
  }
  return t->record(std::move(nd));
}

Var spike_matmul(const Var& a, const Var& s, const char* label) {
  require_same_tape(a, s, "spike_matmul");
  Tape* t = a.tape;
  const Tape::Node& sn = t->node(s.id);
  if (!sn.spike_codes) throw StateError("spike_matmul: operand is not spike data");
  const Tensor& codes = *sn.spike_codes;
  float amp = sn.spike_amp;
  const Tensor& av = a.val();
  int64_t m = av.rows(), k = av.cols(), n = codes.cols();
  if (codes.rows() != k)
    throw ShapeError("spike_matmul: shape mismatch " + av.shape_str() + " vs " +
                     codes.shape_str());
  Tensor out({m, n});
  int64_t fired = spike_nnz(codes);
  std::vector<double> acc(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int64_t kk = 0; kk < k; ++kk) {
      double aik = av.at2(i, kk);
      const float* crow = codes.data() + kk * n;
      for (int64_t j = 0; j < n; ++j) {
        float code = crow[j];
        if (code == 0.0f) continue;
        acc[j] += aik * static_cast<double>(code * amp);
      }
    }
    for (int64_t j = 0; j < n; ++j) out.at2(i, j) = static_cast<float>(acc[j]);
  }
  if (t->audit) {
    MatmulRecord r;
    r.label = label ? label : "spike_matmul";
    r.spike_operand = true;
    r.m = m;
    r.k = k;
    r.n = n;
    r.acs = fired * m;
    r.fired = fired;
    r.slots = k * n;
    t->audit->records.push_back(std::move(r));
  }
  Tape::Node nd;
  nd.op = "spike_matmul";
  if (label) nd.label = label;
  nd.needs_grad = t->node(a.id).needs_grad || sn.needs_grad;
  nd.value = std::move(out);
  if (nd.needs_grad) {
    Tensor ac = av, sv = s.val();
    int32_t aid = a.id, sid = s.id;
    nd.back = [ac, sv, aid, sid](Tape& tp, const Tensor& g) {
      tp.accum(aid, mm_nt(g, sv));
      tp.accum(sid, mm_tn(ac, g));
    };
  }
  return t->record(std::move(nd));
}

}  // namespace bispike
