#include "core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <sstream>

#include "core/calibration.hpp"
#include "core/model.hpp"
#include "core/neurons.hpp"
#include "core/rng.hpp"
#include "core/tape.hpp"

namespace bispike {

bool GradCheckReport::all_pass() const {
  for (const auto& it : items)
    if (!it.pass) return false;
  return true;
}

int GradCheckReport::passed() const {
  int n = 0;
  for (const auto& it : items) n += it.pass ? 1 : 0;
  return n;
}

std::string GradCheckReport::table() const {
  std::ostringstream os;
  if (!faulted_op.empty())
    os << "gradient fault injected on op '" << faulted_op << "' (x1.5)\n";
  for (const auto& it : items)
    os << (it.pass ? "[PASS] " : "[FAIL] ") << it.name << "  " << it.detail << "\n";
  os << "summary: " << passed() << "/" << items.size() << " passed\n";
  return os.str();
}

namespace {

struct Harness {
  uint64_t seed;
  std::string fault;
  GradCheckReport report;

  void add(const std::string& name, bool pass, const std::string& detail) {
    report.items.push_back({name, pass, detail});
  }
  void arm(Tape& t) const {
    if (!fault.empty()) t.set_grad_fault(fault, 1.5f);
  }
};

Tensor rand_tensor(const std::vector<int64_t>& shape, uint64_t seed, const char* stream,
                   double lo = -1.0, double hi = 1.0) {
  RngStream rng(seed, stream_id(stream));
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.at(i) = static_cast<float>(lo + (hi - lo) * rng.uniform(static_cast<uint64_t>(i)));
  return t;
}

std::string fmt(double v) {
  char b[48];
  std::snprintf(b, sizeof(b), "%.6g", v);
  return b;
}

// --- encoder rule checks --------------------------------------------------

void check_surrogate(Harness& H) {
  Tensor m({3});
  m.at(0) = 1.0f;  // at threshold
  m.at(1) = 25.0f;
  m.at(2) = -40.0f;
  Tensor g = surrogate_grad_arctan(m, 1.0f, 2.0f);
  bool peak = g.at(0) == 1.0f;
  bool tail = g.at(1) < 1e-3f && g.at(2) < 1e-3f;
  H.add("surrogate_peak", peak, "ds/dm at theta = " + fmt(g.at(0)) + " (want sg_alpha/2 = 1)");
  H.add("surrogate_tail", tail,
        "|m - theta| >> 0 gives " + fmt(g.at(1)) + " / " + fmt(g.at(2)));

  // The surrogate is a density in the centered argument. Trapezoid over
  // [-50,50] must reproduce the antiderivative's window mass (the tails hold
  // ~2/(pi^2*50) of the unit total, so the window itself is not quite 1).
  const int steps = 400000;
  const double a = -50.0, b = 50.0;
  const double hstep = (b - a) / steps;
  double integral = 0.0;
  for (int i = 0; i <= steps; ++i) {
    double x = a + hstep * i;
    Tensor mm({1});
    mm.at(0) = static_cast<float>(x);
    double y = surrogate_grad_arctan(mm, 0.0f, 2.0f).at(0);
    integral += (i == 0 || i == steps) ? 0.5 * y : y;
  }
  integral *= hstep;
  const double sga = 2.0;
  double window_mass = (2.0 / M_PI) * std::atan((M_PI / 2.0) * sga * b);
  bool ok = std::abs(integral - window_mass) < 1e-5 && std::abs(integral - 1.0) < 0.005;
  H.add("surrogate_integral", ok,
        "trapezoid over [-50,50] = " + fmt(integral) + " (window mass " +
            fmt(window_mass) + ")");
}

void check_ste_support(Harness& H) {
  Tensor m({6});
  float vals[6] = {-0.3f, 0.0f, 0.5f, 0.999f, 1.0f, 1.5f};
  float want[6] = {0.0f, 0.0f, 1.0f, 1.0f, 0.0f, 0.0f};
  for (int i = 0; i < 6; ++i) m.at(i) = vals[i];
  Tensor g = ste_grad_unidirectional(m);
  bool ok = true;
  for (int i = 0; i < 6; ++i) ok = ok && g.at(i) == want[i];
  H.add("ste_support", ok, "1 on the open interval (0,1), 0 elsewhere");
}

void check_ste_expectation_mc(Harness& H) {
  const int N = 100000;
  double worst = 0.0;
  RngStream rng(H.seed, stream_id("gradcheck/ste_mc"));
  for (int gi = 1; gi <= 9; ++gi) {
    double m = 0.1 * gi;
    int64_t fired = 0;
    for (int i = 0; i < N; ++i) {
      uint64_t e = (static_cast<uint64_t>(gi) << 32) | static_cast<uint32_t>(i);
      if (rng.uniform(e) < m) ++fired;
    }
    worst = std::max(worst, std::abs(static_cast<double>(fired) / N - m));
  }
  H.add("ste_expectation_mc", worst < 0.013,
        "binary spike mean vs clip(m,0,1): max |dev| = " + fmt(worst) + " (bound 0.013)");
}

void check_bi_spike_mc(Harness& H) {
  const int N = 100000;
  double worst = 0.0;
  for (int gi = -9; gi <= 9; ++gi) {
    double mval = 0.1 * gi;
    Tensor m({N});
    for (int i = 0; i < N; ++i) m.at(i) = static_cast<float>(mval);
    RngStream rng(H.seed, stream_id("gradcheck/bi_mc"), static_cast<uint32_t>(gi + 16));
    SpikeCode code = bi_spike_sample(m, rng).first;
    double mean = 0.0;
    for (int i = 0; i < N; ++i) mean += code.codes.at(i);
    mean /= N;
    worst = std::max(worst, std::abs(mean - mval));
  }
  H.add("bi_spike_expectation_mc", worst < 0.013,
        "ternary spike mean vs clip(m,-1,1): max |dev| = " + fmt(worst) + " (bound 0.013)");
}

void check_bi_spike_grad_support(Harness& H) {
  Tensor m({7});
  float vals[7] = {-1.5f, -1.0f, -0.5f, 0.0f, 0.5f, 1.0f, 2.0f};
  float want[7] = {0.0f, 0.0f, 1.0f, 1.0f, 1.0f, 0.0f, 0.0f};
  for (int i = 0; i < 7; ++i) m.at(i) = vals[i];
  Tensor g = bi_spike_grad(m);
  bool ok = true;
  for (int i = 0; i < 7; ++i) ok = ok && g.at(i) == want[i];
  H.add("bi_spike_grad_support", ok, "1 on (-1,1), 0 at and beyond the breakpoints");
}

void check_bi_spike_fd(Harness& H) {
  // Tape gradient of mean(hard bi-spike) must match finite differences of the
  // expectation surrogate mean(clip(m,-1,1)) away from the breakpoints.
  Tensor m = rand_tensor({64}, H.seed, "gradcheck/bi_fd", -0.9, 0.9);
  for (int64_t i = 0; i < m.numel(); ++i)
    if (std::abs(std::abs(m.at(i)) - 1.0f) < 0.05f) m.at(i) = 0.5f;

  Tape t;
  H.arm(t);
  Var x = t.leaf(m, true);
  SpikeCode code = bi_spike_forward(m);
  auto codes = std::make_shared<Tensor>(code.codes);
  Var s = spike_encode(x, code.realized(), bi_spike_grad(m), codes, 1.0f, "bi_spike");
  Var loss = mean_all(s);
  t.backward(loss);
  const Tensor& g = t.grad(x);

  double h = 1e-4, worst = 0.0;
  for (int64_t i = 0; i < m.numel(); ++i) {
    auto mean_clip = [&](double delta) {
      double acc = 0.0;
      for (int64_t j = 0; j < m.numel(); ++j) {
        double v = m.at(j) + (j == i ? delta : 0.0);
        acc += std::min(1.0, std::max(-1.0, v));
      }
      return acc / static_cast<double>(m.numel());
    };
    double fd = (mean_clip(h) - mean_clip(-h)) / (2 * h);
    worst = std::max(worst, std::abs(fd - static_cast<double>(g.at(i))));
  }
  H.add("bi_spike_fd", worst < 1e-6,
        "tape grad vs fd of mean(clip(m,-1,1)): max |dev| = " + fmt(worst));
}

void check_elastic_identity(Harness& H) {
  Tensor m = rand_tensor({512}, H.seed, "gradcheck/elastic", -4.0, 4.0);
  float alpha = 1.7f;
  SpikeCode e = elastic_spike_forward(m, alpha);
  Tensor scaled({m.numel()});
  for (int64_t i = 0; i < m.numel(); ++i) scaled.at(i) = m.at(i) / alpha;
  SpikeCode b = bi_spike_forward(scaled);
  bool ok = e.amplitude == alpha;
  for (int64_t i = 0; i < m.numel(); ++i) ok = ok && e.codes.at(i) == b.codes.at(i);
  H.add("elastic_identity", ok, "elastic(m,a) == a * bi_spike(m/a), codes elementwise");
}

void check_elastic_scale_equivariance(Harness& H) {
  Tensor m = rand_tensor({512}, H.seed, "gradcheck/elastic_eq", -4.0, 4.0);
  float alpha = 1.25f;
  SpikeCode base = elastic_spike_forward(m, alpha);
  bool ok = true;
  for (float c : {0.5f, 2.0f, 4.0f}) {
    Tensor cm({m.numel()});
    for (int64_t i = 0; i < m.numel(); ++i) cm.at(i) = c * m.at(i);
    SpikeCode sc = elastic_spike_forward(cm, c * alpha);
    for (int64_t i = 0; i < m.numel(); ++i) ok = ok && sc.codes.at(i) == base.codes.at(i);
    ok = ok && sc.amplitude == c * alpha;
  }
  H.add("elastic_scale_equivariance", ok,
        "elastic(c*m, c*a) = c * elastic(m, a) for c in {0.5, 2, 4}");
}

// --- per-op finite differences ---------------------------------------------

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central finite differences of a scalar-valued tape program with respect to
// every element of every differentiable input.
void check_op_fd(Harness& H, const std::string& name, std::vector<Tensor> inputs,
                 const Builder& build, double h = 1e-2, double rel = 2e-3,
                 double atol = 2e-4) {
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(t.leaf(x));
    return static_cast<double>(build(t, vars).val().at(0));
  };

  Tape t;
  H.arm(t);
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(t.leaf(x, true));
  Var loss = build(t, vars);
  t.backward(loss);

  double worst = 0.0;
  std::string worst_at;
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor g = t.has_grad(vars[i]) ? t.grad(vars[i]) : Tensor(inputs[i].shape());
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      std::vector<Tensor> xs = inputs;
      xs[i].at(j) += static_cast<float>(h);
      double up = eval(xs);
      xs[i].at(j) -= static_cast<float>(2 * h);
      double dn = eval(xs);
      double fd = (up - dn) / (2 * h);
      double gt = g.at(j);
      double err = std::abs(fd - gt) - rel * std::max(std::abs(fd), std::abs(gt));
      if (err > worst) {
        worst = err;
        worst_at = "input " + std::to_string(i) + "[" + std::to_string(j) + "]: tape " +
                   fmt(gt) + " vs fd " + fmt(fd);
      }
    }
  }
  bool ok = worst <= atol;
  H.add("op_fd[" + name + "]", ok,
        ok ? "tape grads match finite differences" : worst_at);
}

// Scalar objective: weighted sum with a fixed random no-grad weight tensor so
// every output coordinate influences the loss.
Var wsum(Tape& t, const Var& out, uint64_t seed) {
  Tensor w = rand_tensor(out.val().shape(), seed, "gradcheck/wsum", 0.25, 1.0);
  return sum_all(mul(out, t.leaf(w)));
}

void check_all_op_fd(Harness& H) {
  uint64_t sd = H.seed;
  auto T2 = [&](int64_t r, int64_t c, const char* s, double lo = -1, double hi = 1) {
    return rand_tensor({r, c}, sd, s, lo, hi);
  };

  check_op_fd(H, "matmul", {T2(3, 4, "a1"), T2(4, 2, "b1")},
              [&](Tape& t, const std::vector<Var>& v) {
                return wsum(t, matmul(v[0], v[1]), sd);
              });
  check_op_fd(H, "matmul_nt", {T2(3, 4, "a2"), T2(2, 4, "b2")},
              [&](Tape& t, const std::vector<Var>& v) {
                return wsum(t, matmul_nt(v[0], v[1]), sd);
              });
  check_op_fd(H, "add", {T2(3, 4, "a3"), T2(3, 4, "b3")},
              [&](Tape& t, const std::vector<Var>& v) { return wsum(t, add(v[0], v[1]), sd); });
  check_op_fd(H, "sub", {T2(3, 4, "a4"), T2(3, 4, "b4")},
              [&](Tape& t, const std::vector<Var>& v) { return wsum(t, sub(v[0], v[1]), sd); });
  check_op_fd(H, "mul", {T2(3, 4, "a5"), T2(3, 4, "b5")},
              [&](Tape& t, const std::vector<Var>& v) { return wsum(t, mul(v[0], v[1]), sd); });
  check_op_fd(H, "scale", {T2(3, 4, "a6")},
              [&](Tape& t, const std::vector<Var>& v) { return wsum(t, scale(v[0], 1.7f), sd); });
  check_op_fd(H, "add_scalar", {T2(3, 4, "a7")},
              [&](Tape& t, const std::vector<Var>& v) {
                return wsum(t, add_scalar(v[0], 0.3f), sd);
              });
  check_op_fd(H, "add_rowvec", {T2(3, 4, "a8"), rand_tensor({4}, sd, "v8")},
              [&](Tape& t, const std::vector<Var>& v) {
                return wsum(t, add_rowvec(v[0], v[1]), sd);
              });
  {
    Tensor c = T2(3, 4, "a9", -2.0, 2.0);
    for (int64_t i = 0; i < c.numel(); ++i)
      if (std::abs(std::abs(c.at(i)) - 1.0f) < 0.1f) c.at(i) = 0.4f;
    check_op_fd(H, "clip", {c}, [&](Tape& t, const std::vector<Var>& v) {
      return wsum(t, clip(v[0], -1.0f, 1.0f), sd);
    });
  }
  {
    Tensor a = T2(3, 4, "a10", 0.2, 1.5);
    for (int64_t i = 0; i < a.numel(); ++i)
      if (i % 2 == 0) a.at(i) = -a.at(i);
    check_op_fd(H, "vabs", {a},
                [&](Tape& t, const std::vector<Var>& v) { return wsum(t, vabs(v[0]), sd); });
  }
  check_op_fd(H, "vsquare", {T2(3, 4, "a11")},
              [&](Tape& t, const std::vector<Var>& v) { return wsum(t, vsquare(v[0]), sd); });
  check_op_fd(H, "mean_all", {T2(3, 4, "a12")},
              [&](Tape&, const std::vector<Var>& v) { return mean_all(v[0]); });
  check_op_fd(H, "sum_all", {T2(3, 4, "a13")},
              [&](Tape&, const std::vector<Var>& v) { return sum_all(v[0]); });
  check_op_fd(H, "mean_rows", {T2(4, 3, "a14")},
              [&](Tape& t, const std::vector<Var>& v) { return wsum(t, mean_rows(v[0]), sd); });
  check_op_fd(H, "softmax_rows", {T2(3, 5, "a15", -2, 2)},
              [&](Tape& t, const std::vector<Var>& v) {
                return wsum(t, softmax_rows(v[0]), sd);
              });
  check_op_fd(H, "softmax_rows_causal", {T2(4, 4, "a16", -2, 2)},
              [&](Tape& t, const std::vector<Var>& v) {
                return wsum(t, softmax_rows(v[0], true), sd);
              });
  check_op_fd(H, "layernorm",
              {T2(3, 6, "a17", -2, 2), rand_tensor({6}, sd, "g17", 0.5, 1.5),
               rand_tensor({6}, sd, "b17")},
              [&](Tape& t, const std::vector<Var>& v) {
                return wsum(t, layernorm(v[0], v[1], v[2]), sd);
              });
  check_op_fd(H, "gather_rows", {T2(5, 3, "a18")},
              [&](Tape& t, const std::vector<Var>& v) {
                return wsum(t, gather_rows(v[0], {0, 2, 4, 2}), sd);
              });
  check_op_fd(H, "slice_concat_cols", {T2(3, 6, "a19")},
              [&](Tape& t, const std::vector<Var>& v) {
                Var l = slice_cols(v[0], 0, 2), r = slice_cols(v[0], 2, 6);
                return wsum(t, concat_cols({r, l}), sd);
              });
  check_op_fd(H, "slice_concat_rows", {T2(6, 3, "a20")},
              [&](Tape& t, const std::vector<Var>& v) {
                Var a = slice_rows(v[0], 0, 2), b = slice_rows(v[0], 2, 6);
                return wsum(t, concat_rows({b, a}), sd);
              });
  check_op_fd(H, "cross_entropy_logits", {T2(4, 5, "a21", -2, 2)},
              [&](Tape&, const std::vector<Var>& v) {
                return cross_entropy_logits(v[0], {1, 0, 3, 2});
              });
  check_op_fd(H, "custom_grad", {T2(3, 4, "a22")},
              [&](Tape& t, const std::vector<Var>& v) {
                // jacobian diag of vsquare at the same point: d(x^2)/dx = 2x
                Tensor jac(v[0].val().shape());
                for (int64_t i = 0; i < jac.numel(); ++i) jac.at(i) = 2.0f * v[0].val().at(i);
                Tensor val(v[0].val().shape());
                for (int64_t i = 0; i < val.numel(); ++i)
                  val.at(i) = v[0].val().at(i) * v[0].val().at(i);
                return wsum(t, custom_grad_with_value(v[0], val, jac, "custom_grad"), sd);
              });
}

// --- spike product backward vs dense reference ------------------------------

Var encode_fixed(Tape&, const Var& m, float alpha) {
  SpikeCode code = elastic_spike_forward(m.val(), alpha);
  auto codes = std::make_shared<Tensor>(code.codes);
  return spike_encode(m, code.realized(), elastic_spike_grad(m.val(), alpha), codes,
                      alpha, "bi_spike");
}

void check_spike_products_match_dense(Harness& H) {
  uint64_t sd = H.seed;
  float alpha = 0.8f;
  Tensor mrow = rand_tensor({4, 6}, sd, "sp/m", -2.0, 2.0);
  Tensor w = rand_tensor({6, 3}, sd, "sp/w");
  Tensor b = rand_tensor({3}, sd, "sp/b");

  // spike_linear path
  Tape t1;
  H.arm(t1);
  Var m1 = t1.leaf(mrow, true);
  Var w1 = t1.leaf(w, true), b1 = t1.leaf(b, true);
  Var s1 = encode_fixed(t1, m1, alpha);
  Var y1 = spike_linear(s1, w1, b1);
  t1.backward(wsum(t1, y1, sd));

  // dense reference on the realized spike values
  Tape t2;
  Tensor realized = elastic_spike_forward(mrow, alpha).realized();
  Var r2 = t2.leaf(realized, true);
  Var w2 = t2.leaf(w, true), b2 = t2.leaf(b, true);
  Var y2 = add_rowvec(matmul(r2, w2), b2);
  t2.backward(wsum(t2, y2, sd));

  auto same = [](const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
      if (a.at(i) != b.at(i)) return false;
    return true;
  };
  auto close = [](const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i) {
      double d = std::abs(static_cast<double>(a.at(i)) - b.at(i));
      if (d > 1e-5 * std::max({1.0, std::abs(static_cast<double>(a.at(i))),
                               std::abs(static_cast<double>(b.at(i)))}))
        return false;
    }
    return true;
  };

  // the sparse kernel folds the bias into its accumulator, the dense path
  // adds it after rounding, so values agree to ~1 ulp while grads are exact
  bool val_ok = close(y1.val(), y2.val());
  bool w_ok = same(t1.grad(w1), t2.grad(w2));
  bool b_ok = same(t1.grad(b1), t2.grad(b2));
  // the encoder jacobian is 1 inside (-alpha, alpha): membrane grads there
  // must equal the dense input grads, and be 0 outside
  Tensor jac = elastic_spike_grad(mrow, alpha);
  const Tensor& gm = t1.grad(m1);
  const Tensor& gr = t2.grad(r2);
  bool m_ok = true;
  for (int64_t i = 0; i < gm.numel(); ++i)
    m_ok = m_ok && gm.at(i) == gr.at(i) * jac.at(i);
  H.add("spike_linear_vs_dense", val_ok && w_ok && b_ok && m_ok,
        "values and w/b/membrane grads match the dense matmul reference");

  // attention-shaped products
  Tensor q = rand_tensor({4, 6}, sd, "sp/q");
  Tape t3;
  H.arm(t3);
  Var q3 = t3.leaf(q, true);
  Var m3 = t3.leaf(mrow, true);
  Var s3 = encode_fixed(t3, m3, alpha);
  Var sc3 = spike_matmul_nt(q3, s3);
  t3.backward(wsum(t3, sc3, sd));

  Tape t4;
  Var q4 = t4.leaf(q, true);
  Var r4 = t4.leaf(realized, true);
  Var sc4 = matmul_nt(q4, r4);
  t4.backward(wsum(t4, sc4, sd));

  bool nt_ok = same(sc3.val(), sc4.val()) && same(t3.grad(q3), t4.grad(q4));
  {
    const Tensor& gm3 = t3.grad(m3);
    const Tensor& gr4 = t4.grad(r4);
    for (int64_t i = 0; i < gm3.numel(); ++i)
      nt_ok = nt_ok && gm3.at(i) == gr4.at(i) * jac.at(i);
  }
  H.add("spike_matmul_nt_vs_dense", nt_ok, "a.s^T matches the dense matmul_nt reference");

  Tensor att = rand_tensor({5, 4}, sd, "sp/att", 0.0, 1.0);
  Tensor mv = rand_tensor({4, 6}, sd, "sp/mv", -2.0, 2.0);
  Tensor rv = elastic_spike_forward(mv, alpha).realized();
  Tensor jv = elastic_spike_grad(mv, alpha);
  Tape t5;
  H.arm(t5);
  Var a5 = t5.leaf(att, true);
  Var m5 = t5.leaf(mv, true);
  Var s5 = encode_fixed(t5, m5, alpha);
  Var c5 = spike_matmul(a5, s5);
  t5.backward(wsum(t5, c5, sd));

  Tape t6;
  Var a6 = t6.leaf(att, true);
  Var r6 = t6.leaf(rv, true);
  Var c6 = matmul(a6, r6);
  t6.backward(wsum(t6, c6, sd));

  bool mm_ok = same(c5.val(), c6.val()) && same(t5.grad(a5), t6.grad(a6));
  {
    const Tensor& gm5 = t5.grad(m5);
    const Tensor& gr6 = t6.grad(r6);
    for (int64_t i = 0; i < gm5.numel(); ++i)
      mm_ok = mm_ok && gm5.at(i) == gr6.at(i) * jv.at(i);
  }
  H.add("spike_matmul_vs_dense", mm_ok, "a.s matches the dense matmul reference");
}

// --- end-to-end model check -------------------------------------------------

struct ModelFdOutcome {
  bool ok = false;
  std::string detail;
};

ModelFdOutcome model_fd_once(uint64_t seed, NeuronMode mode, const std::string& fault) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.T = 2;
  cfg.vocab = 11;
  cfg.n_classes = 3;
  cfg.max_len = 8;
  cfg.head = TaskHead::cls;
  cfg.mode = mode;
  cfg.kv_mode = mode;
  cfg.seed = seed;
  SpikingTransformer model = SpikingTransformer::init(cfg);

  Batch batch;
  RngStream rng(seed, stream_id("gradcheck/model_data"));
  for (int s = 0; s < 2; ++s) {
    std::vector<int32_t> toks;
    for (int i = 0; i < 5; ++i)
      toks.push_back(static_cast<int32_t>(rng.bits32((s << 8) | i) % cfg.vocab));
    batch.tokens.push_back(toks);
    batch.labels.push_back(static_cast<int32_t>(rng.bits32((s << 8) | 100) % cfg.n_classes));
  }

  if (mode == NeuronMode::elastic_bi) {
    Tape t0;
    ForwardOptions c;
    c.calibrate = true;
    c.require_grad = false;
    model_forward(t0, model, batch, c);
  }
  model.alpha.freeze();

  auto loss_at = [&]() {
    Tape t;
    ForwardOptions o;
    o.expectation = true;
    o.require_grad = false;
    return static_cast<double>(model_forward(t, model, batch, o).loss.val().at(0));
  };

  Tape tape;
  if (!fault.empty()) tape.set_grad_fault(fault, 1.5f);
  ForwardOptions o;
  o.expectation = true;
  BatchResult res = model_forward(tape, model, batch, o);
  tape.backward(res.loss);

  // h balances f32 forward noise (~eps/h) against curvature truncation (~h^2);
  // at 5e-4 both sit near 1e-4 on this loss.
  const double h = 5e-4, rel = 5e-3, atol = 1e-3;
  double worst = -1.0;
  std::string worst_at;
  int coords = 0;
  RngStream pick(seed, stream_id("gradcheck/model_pick"));
  for (const auto& name : model.params.names()) {
    const Var& v = res.bound.at(name);
    Tensor g = tape.has_grad(v) ? tape.grad(v) : Tensor(model.params.at(name).shape());
    Tensor& p = model.params.at(name);
    for (int c = 0; c < 2; ++c) {
      int64_t j = static_cast<int64_t>(pick.bits32((static_cast<uint64_t>(coords) << 8) | c) %
                                       static_cast<uint64_t>(p.numel()));
      float keep = p.at(j);
      p.at(j) = keep + static_cast<float>(h);
      double up = loss_at();
      p.at(j) = keep - static_cast<float>(h);
      double dn = loss_at();
      p.at(j) = keep;
      double fd = (up - dn) / (2 * h);
      double gt = g.at(j);
      double err = std::abs(fd - gt) - rel * std::max(std::abs(fd), std::abs(gt));
      if (err > worst) {
        worst = err;
        worst_at = name + "[" + std::to_string(j) + "]: tape " + fmt(gt) + " vs fd " + fmt(fd);
      }
      ++coords;
    }
  }
  ModelFdOutcome out;
  out.ok = worst <= atol;
  out.detail = out.ok ? (std::to_string(coords) + " sampled coordinates match")
                      : worst_at;
  return out;
}

void check_model_fd(Harness& H, NeuronMode mode, const std::string& name) {
  // Parameter perturbations can push a membrane across an encoder breakpoint,
  // which finite differences feel and the expectation gradient (by design)
  // does not. A genuinely wrong gradient fails every seed; a breakpoint
  // collision is seed-specific, so retry a few offsets and take the first
  // clean run.
  ModelFdOutcome last;
  for (uint64_t attempt = 0; attempt < 4; ++attempt) {
    last = model_fd_once(H.seed + attempt, mode, H.fault);
    if (last.ok) {
      if (attempt > 0) last.detail += " (seed offset " + std::to_string(attempt) + ")";
      break;
    }
  }
  H.add(name, last.ok, last.detail);
}

}  // namespace

GradCheckReport run_gradcheck(uint64_t seed, const std::string& inject_fault_op) {
  Harness H{seed, inject_fault_op, {}};
  H.report.faulted_op = inject_fault_op;

  check_surrogate(H);
  check_ste_support(H);
  check_ste_expectation_mc(H);
  check_bi_spike_mc(H);
  check_bi_spike_grad_support(H);
  check_bi_spike_fd(H);
  check_elastic_identity(H);
  check_elastic_scale_equivariance(H);
  check_all_op_fd(H);
  check_spike_products_match_dense(H);
  check_model_fd(H, NeuronMode::elastic_bi, "model_fd[elastic_bi]");
  check_model_fd(H, NeuronMode::lif_surrogate, "model_fd[lif_surrogate]");

  return H.report;
}

}  // namespace bispike
