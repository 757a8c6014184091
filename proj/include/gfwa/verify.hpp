#pragma once

// Named invariant suites shared by the CLI `check` command and the acceptance
// binary. Every check produces one CheckRecord; a suite passes when all of its
// records pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gfwa/attn_ref.hpp"
#include "gfwa/attn_tiled.hpp"
#include "gfwa/gate.hpp"
#include "gfwa/memory_sim.hpp"
#include "gfwa/model.hpp"
#include "gfwa/nsa.hpp"
#include "gfwa/numerics.hpp"

namespace gfwa {

struct CheckRecord {
  std::string suite;
  std::string name;
  std::string params;
  double residual = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string verdict;
};

struct CheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 0;  // 0 keeps each suite's default
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"scan",       "attn-forward", "attn-backward", "recurrence",
                                                 "objective",  "nsa",          "layer"};
  return names;
}

inline void write_check_csv(std::ostream& os, const std::vector<CheckRecord>& records) {
  os << "suite,name,params,residual,tolerance,verdict,passed\n";
  for (const auto& r : records) {
    os << r.suite << ',' << r.name << ",\"" << r.params << "\"," << r.residual << ',' << r.tolerance << ",\""
       << r.verdict << "\"," << (r.passed ? "pass" : "fail") << '\n';
  }
}

inline bool all_passed(const std::vector<CheckRecord>& records) {
  return std::all_of(records.begin(), records.end(), [](const CheckRecord& r) { return r.passed; });
}

namespace detail {

class Recorder {
 public:
  explicit Recorder(std::string suite) : suite_(std::move(suite)) {}

  CheckRecord& add(std::string name, std::string params, double residual, double tol, std::string verdict = {}) {
    const bool ok = std::isfinite(residual) && residual <= tol;
    records_.push_back({suite_, std::move(name), std::move(params), residual, tol, ok, std::move(verdict)});
    return records_.back();
  }

  std::vector<CheckRecord> take() { return std::move(records_); }

 private:
  std::string suite_;
  std::vector<CheckRecord> records_;
};

// "k1=v1 k2=v2 ..." from alternating keys and values.
template <typename... Args>
std::string fmt_params(const Args&... kv) {
  std::ostringstream os;
  std::size_t i = 0;
  ((os << (i == 0 ? "" : (i % 2 == 0 ? " " : "=")) << kv, ++i), ...);
  return os.str();
}

// Central differences of a scalar function with respect to every entry of x.
inline std::vector<double> central_gradient(std::span<double> x, const std::function<double()>& f,
                                            double eps) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double fp = f();
    x[i] = saved - eps;
    const double fm = f();
    x[i] = saved;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

inline std::size_t pick(Rng& rng, std::initializer_list<std::size_t> xs) {
  return *(xs.begin() + rng.index(xs.size()));
}

// Window lengths chosen to hit every regime relative to the tile sizes and N.
inline std::size_t random_window(std::size_t n, std::size_t bc, Rng& rng) {
  switch (rng.index(6)) {
    case 0: return 1;
    case 1: return 1 + rng.index(std::max<std::size_t>(bc, 1));
    case 2: return bc;
    case 3: return bc + 1;
    case 4: return n + 1 + rng.index(8);
    default: return 1 + rng.index(std::max<std::size_t>(n, 1));
  }
}

inline std::size_t brute_force_tiles(const AttnConfig& cfg) {
  std::size_t tiles = 0;
  for (std::size_t rb = 0; rb * cfg.block_rows < cfg.seq_len; ++rb) {
    for (std::size_t cb = 0; cb * cfg.block_cols < cfg.seq_len; ++cb) {
      bool any = false;
      for (std::size_t i = rb * cfg.block_rows; i < std::min(cfg.seq_len, (rb + 1) * cfg.block_rows) && !any; ++i)
        for (std::size_t j = cb * cfg.block_cols; j < std::min(cfg.seq_len, (cb + 1) * cfg.block_cols); ++j)
          if (cfg.in_window(i, j)) {
            any = true;
            break;
          }
      tiles += any;
    }
  }
  return tiles;
}

inline std::size_t in_window_pairs(std::size_t n, std::size_t w) {
  std::size_t s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::min(i + 1, w);
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline std::vector<CheckRecord> check_scan(const CheckOptions& opts = {}) {
  detail::Recorder rec("scan");
  Rng rng(opts.seed ^ 0x5ca9ULL);
  const std::size_t heads = 2;
  for (std::size_t n : {1, 7, 64, 100, 257, 1000}) {
    for (std::size_t chunk : {1, 3, 16, 64, 1000}) {
      if (chunk > n) continue;
      const MatrixD h = random_normal<double>(n, heads, rng, 2.0);
      MatrixD beta = map(random_normal<double>(n, heads, rng), [](double a) { return 1.0 + elu(a); });
      MatrixD alpha(n, heads);
      for (std::size_t i = 0; i < alpha.size(); ++i)
        alpha.values()[i] = gate_alpha(h.values()[i], beta.values()[i], kGateEps);
      ScanCounters c1, c3;
      const MatrixD naive = scan_naive(alpha);
      const MatrixD one = scan_onepass(h, beta, chunk, kGateEps, &c1);
      const MatrixD three = scan_three_phase(h, beta, chunk, kGateEps, &c3);
      const std::string p = detail::fmt_params("N", n, "B_t", chunk, "H", heads);
      rec.add("onepass-vs-naive", p, max_rel_error(one, naive), 1e-12);
      rec.add("three-phase-vs-naive", p, max_rel_error(three, naive), 1e-12);
      rec.add("onepass-vs-three-phase", p, max_abs_diff(one, three), 0.0);
      rec.add("onepass-reads", p, std::abs(double(c1.input_reads()) - 2.0 * n * heads), 0.0,
              std::to_string(c1.input_reads()));
      rec.add("onepass-writes", p, std::abs(double(c1.writes_u) - double(n * heads)), 0.0,
              std::to_string(c1.writes_u));
    }
  }
  return rec.take();
}

inline std::vector<CheckRecord> check_attn_forward(const CheckOptions& opts = {}) {
  detail::Recorder rec("attn-forward");
  Rng rng(opts.seed ^ 0xf0ddULL);
  const std::size_t trials = opts.trials ? opts.trials : 200;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t n = 1 + rng.index(rng.index(4) == 0 ? 512 : 160);
    const std::size_t heads = 1 + rng.index(4);
    const std::size_t d_h = detail::pick(rng, {1, 4, 8, 16});
    const std::size_t br = detail::pick(rng, {1, 4, 16, 32, 64, 128});
    const std::size_t bc = detail::pick(rng, {1, 4, 16, 32, 64, 128});
    const std::size_t w = detail::random_window(n, bc, rng);
    const AttnConfig cfg = AttnConfig::make(n, d_h, w, br, bc, heads);
    const MatrixD q = random_normal<double>(n, heads * d_h, rng);
    const MatrixD k = random_normal<double>(n, heads * d_h, rng);
    const MatrixD v = random_normal<double>(n, heads * d_h, rng);
    const MatrixD u = random_gate_prefix(n, heads, rng);
    // Float storage on the tiled path against the double reference on the same values.
    const Matrix qf = q.cast<float>(), kf = k.cast<float>(), vf = v.cast<float>(), uf = u.cast<float>();
    const auto tiled = forward_tiled_heads(qf, kf, vf, uf, cfg);
    double err = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
      const auto ref = ref_gatedfwa<double>(head_slice(qf, h, d_h).cast<double>(),
                                            head_slice(kf, h, d_h).cast<double>(),
                                            head_slice(vf, h, d_h).cast<double>(),
                                            column_of(uf.cast<double>(), h), cfg);
      err = std::max(err, max_rel_error(head_slice(tiled.o, h, d_h), ref.o));
    }
    const std::string p = detail::fmt_params("N", n, "w", w, "H", heads, "d_h", d_h, "B_r", br, "B_c", bc);
    rec.add("tiled-vs-ref", p, err, 1e-5);
    const AttnConfig single = AttnConfig::make(n, d_h, w, br, bc);
    rec.add("tiles-visited", p,
            std::abs(double(tiled.counters.total_tiles()) - double(heads * detail::brute_force_tiles(single))), 0.0);
    rec.add("logit-evaluations", p,
            std::abs(double(tiled.counters.logit_evaluations) - double(heads * detail::in_window_pairs(n, w))), 0.0);
  }
  // Reductions: alpha == 0 gives plain SWA, and additionally w = N gives full softmax.
  for (std::size_t trial = 0; trial < std::max<std::size_t>(trials / 4, 50); ++trial) {
    const std::size_t n = 1 + rng.index(200);
    const std::size_t d_h = detail::pick(rng, {2, 8, 16});
    const std::size_t bc = detail::pick(rng, {4, 16, 64});
    const std::size_t w = detail::random_window(n, bc, rng);
    const AttnConfig cfg = AttnConfig::make(n, d_h, w, detail::pick(rng, {4, 16, 64}), bc);
    const MatrixD q = random_normal<double>(n, d_h, rng);
    const MatrixD k = random_normal<double>(n, d_h, rng);
    const MatrixD v = random_normal<double>(n, d_h, rng);
    const std::vector<double> zero_u(n, 0.0);
    const auto gated = forward_tiled<double>(q, k, v, zero_u, cfg);
    const std::string p = detail::fmt_params("N", n, "w", w, "d_h", d_h);
    rec.add("alpha0-equals-swa", p, max_rel_error(gated.out.o, ref_swa(q, k, v, cfg).o), 1e-6);
    AttnConfig full = cfg;
    full.window = n;
    const auto gated_full = forward_tiled<double>(q, k, v, zero_u, full);
    rec.add("alpha0-wN-equals-softmax", p, max_rel_error(gated_full.out.o, ref_softmax_full(q, k, v, cfg).o),
            1e-6);
  }
  return rec.take();
}

// Scalar probe loss sum(O * G) for a fixed random G, through the dense reference.
inline double probe_loss(const MatrixD& q, const MatrixD& k, const MatrixD& v, std::span<const double> u,
                         const AttnConfig& cfg, const MatrixD& g) {
  const auto o = ref_gatedfwa<double>(q, k, v, u, cfg).o;
  double s = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) s += o.values()[i] * g.values()[i];
  return s;
}

inline std::vector<CheckRecord> check_attn_backward(const CheckOptions& opts = {}) {
  detail::Recorder rec("attn-backward");
  Rng rng(opts.seed ^ 0xbacdULL);
  const std::size_t trials = opts.trials ? opts.trials : 50;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t n = 1 + rng.index(40);
    const std::size_t d_h = detail::pick(rng, {1, 2, 4, 8});
    const std::size_t bc = detail::pick(rng, {1, 4, 8, 16});
    const std::size_t w = detail::random_window(n, bc, rng);
    const AttnConfig cfg = AttnConfig::make(n, d_h, w, detail::pick(rng, {1, 4, 8, 16}), bc);
    MatrixD q = random_normal<double>(n, d_h, rng);
    MatrixD k = random_normal<double>(n, d_h, rng);
    MatrixD v = random_normal<double>(n, d_h, rng);
    std::vector<double> u = column_of(random_gate_prefix(n, 1, rng), 0);
    const MatrixD g = random_normal<double>(n, d_h, rng);

    const auto fwd = forward_tiled<double>(q, k, v, u, cfg);
    const auto tiled = backward_tiled<double>(q, k, v, u, cfg, fwd.out.o, fwd.out.l, g).grads;
    const auto ref = ref_backward<double>(q, k, v, u, cfg, g);
    const std::string p = detail::fmt_params("N", n, "w", w, "d_h", d_h, "B_r", cfg.block_rows, "B_c", bc);
    rec.add("dQ-vs-ref", p, max_rel_error(tiled.d_q, ref.d_q), 1e-5);
    rec.add("dK-vs-ref", p, max_rel_error(tiled.d_k, ref.d_k), 1e-5);
    rec.add("dV-vs-ref", p, max_rel_error(tiled.d_v, ref.d_v), 1e-5);
    rec.add("dU-vs-ref", p, max_rel_error_d(tiled.d_u, ref.d_u),
            1e-5);

    auto loss = [&] { return probe_loss(q, k, v, u, cfg, g); };
    const double eps = 1e-5;
    rec.add("dQ-vs-fd", p, max_rel_error_d(tiled.d_q.values(), detail::central_gradient(q.values(), loss, eps)), 1e-4);
    rec.add("dK-vs-fd", p, max_rel_error_d(tiled.d_k.values(), detail::central_gradient(k.values(), loss, eps)), 1e-4);
    rec.add("dV-vs-fd", p, max_rel_error_d(tiled.d_v.values(), detail::central_gradient(v.values(), loss, eps)), 1e-4);
    // Softmax is invariant to a shift of the whole prefix, so only differences of U
    // matter and dU sums to zero; the finite difference sees the same thing.
    rec.add("dU-vs-fd", p, max_rel_error_d(tiled.d_u, detail::central_gradient(u, loss, eps)), 1e-4);
  }
  return rec.take();
}

inline std::vector<CheckRecord> check_recurrence(const CheckOptions& opts = {}) {
  detail::Recorder rec("recurrence");
  Rng rng(opts.seed ^ 0x4ec4ULL);
  const std::size_t trials = opts.trials ? opts.trials : 100;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t d = 1 + rng.index(3);
    const FeatureMap fm(d, 2 + rng.index(3));
    const std::size_t w = 1 + rng.index(4);
    const std::size_t t = w + 1 + rng.index(8);
    const MemorySequence s = MemorySequence::random(t, d, 1 + rng.index(3), rng);
    const std::string p = detail::fmt_params("trial", trial, "d", d, "P", fm.degree(), "w", w, "t", t);
    rec.add("softmax", p, check_recurrence_softmax(s, fm, t), 1e-10);
    rec.add("swa", p, check_recurrence_swa(s, fm, t, w), 1e-10);
    const GatedRecurrenceCheck gc = check_recurrence_gatedfwa(s, fm, t, w);
    const LeavingCoefficient v = gc.verdict(1e-10);
    std::ostringstream verdict;
    verdict << "leaving coefficient " << to_string(v) << "; printed residual " << gc.residual_printed
            << ", exact residual " << gc.residual_exact;
    rec.add("gatedfwa", p, v == LeavingCoefficient::exact ? gc.residual_exact : gc.residual_printed, 1e-10,
            verdict.str());
  }
  return rec.take();
}

inline std::vector<CheckRecord> check_objective(const CheckOptions& opts = {}) {
  detail::Recorder rec("objective");
  Rng rng(opts.seed ^ 0x0b1eULL);
  const std::size_t trials = opts.trials ? opts.trials : 100;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t d = 1 + rng.index(3);
    const FeatureMap fm(d, 2 + rng.index(3));
    const std::size_t w = 1 + rng.index(4);
    const std::size_t t = w + 1 + rng.index(8);
    const MemorySequence s = MemorySequence::random(t, d, 1 + rng.index(3), rng);
    const std::string p = detail::fmt_params("trial", trial, "d", d, "w", w, "t", t);
    rec.add("softmax", p, check_objective_consistency(MemoryKind::softmax, s, fm, t).residual, 1e-12);
    rec.add("swa", p, check_objective_consistency(MemoryKind::swa, s, fm, t, w).residual, 1e-12);
    const ObjectiveCheck gc = check_objective_consistency(MemoryKind::gatedfwa, s, fm, t, w);
    std::ostringstream verdict;
    verdict << "coefficient " << to_string(gc.best.coefficient) << ", delta " << to_string(gc.best.sign)
            << "; other sign residual "
            << gc.gated_residual(gc.best.coefficient, gc.best.sign == DeltaSign::leaving_minus_entering
                                                          ? DeltaSign::entering_minus_leaving
                                                          : DeltaSign::leaving_minus_entering);
    rec.add("gatedfwa", p, gc.residual, 1e-10, verdict.str());
  }

  // Softmax objective vanishing: exponent of |L_t| against t for fixed M, k, v.
  {
    const FeatureMap fm(2, 3);
    const MatrixD m = random_normal<double>(fm.feature_dim(), 2, rng);
    const std::vector<double> k = {0.3, -0.7}, v = {1.1, 0.4};
    const std::vector<std::size_t> ts = {10, 100, 1000};
    const auto mags = softmax_objective_decay(m, k, v, fm, ts);
    const std::vector<double> xs(ts.begin(), ts.end());
    const double slope = loglog_slope(xs, mags);
    rec.add("softmax-objective-decay", "t=10,100,1000", std::abs(slope + 1.0), 0.05,
            "exponent " + std::to_string(slope));
  }
  // SWA objective along M = c * (-Delta_t): strictly decreasing and linear in c.
  {
    const FeatureMap fm(2, 3);
    const MemorySequence s = MemorySequence::random(8, 2, 2, rng);
    const std::vector<double> cs = {1.0, 10.0, 100.0};
    const auto vals = swa_objective_ray(s, fm, 8, 3, cs);
    const bool decreasing = vals[0] < 0.0 && vals[1] < vals[0] && vals[2] < vals[1];
    const double linearity = std::abs(vals[2] / vals[0] - 100.0) / 100.0;
    std::ostringstream verdict;
    verdict << "L = " << vals[0] << ", " << vals[1] << ", " << vals[2];
    rec.add("swa-objective-unbounded", "c=1,10,100", decreasing ? linearity : INFINITY, 1e-12, verdict.str());
  }
  // Gated gradient path: analytic product against the numerical Jacobian.
  for (std::size_t trial = 0; trial < 10; ++trial) {
    MatrixD alphas(12, 2);
    for (auto& a : alphas.values()) a = rng.uniform(0.0, 1.5);
    const std::size_t p = rng.index(6);
    const std::size_t t = p + 5;
    const GradientPath gp = gradient_path_product(alphas, p, t, opts.seed + trial);
    rec.add("gradient-path", detail::fmt_params("p", p, "t", t), gp.rel_error(), 1e-6,
            "off-diagonal " + std::to_string(gp.max_off_diagonal));
  }
  return rec.take();
}

// Reference top-k by repeated argmax over raw logits, lowest index on ties.
inline std::vector<std::size_t> brute_force_topk(std::span<const double> q, const MatrixD& k_cmp, std::size_t k) {
  std::vector<double> logits(k_cmp.rows());
  for (std::size_t j = 0; j < k_cmp.rows(); ++j) logits[j] = detail::dot(q, k_cmp.row(j));
  std::vector<bool> taken(logits.size(), false);
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < std::min(k, logits.size()); ++r) {
    std::size_t best = logits.size();
    for (std::size_t j = 0; j < logits.size(); ++j)
      if (!taken[j] && (best == logits.size() || logits[j] > logits[best])) best = j;
    taken[best] = true;
    out.push_back(best);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<CheckRecord> check_nsa(const CheckOptions& opts = {}) {
  detail::Recorder rec("nsa");
  Rng rng(opts.seed ^ 0x25aULL);
  const std::size_t trials = opts.trials ? opts.trials : 40;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t n = 1 + rng.index(128);
    const std::size_t b = detail::pick(rng, {2, 4, 8, 16});
    NSAConfig cfg{b, b, b, 1 + rng.index(3), 1 + rng.index(32)};
    const std::size_t d_h = detail::pick(rng, {2, 4, 8});
    MatrixD q = random_normal<double>(n, d_h, rng);
    MatrixD k = random_normal<double>(n, d_h, rng);
    const MatrixD v = random_normal<double>(n, d_h, rng);
    const bool ties = trial % 3 == 0;
    if (ties) {
      // Coarse integer values make equal block scores common.
      for (auto& x : q.values()) x = std::round(x);
      for (auto& x : k.values()) x = std::round(x);
    }
    const std::vector<double> u = column_of(random_gate_prefix(n, 1, rng), 0);
    const auto res = nsa_forward<double>(q, k, v, u, NSAParams<double>::zeros(d_h), cfg);
    std::size_t mismatches = 0;
    std::size_t over = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = i + 1;
      const auto cmp = compress_kv(k, v, t, cfg);
      if (brute_force_topk(q.row(i), cmp.k, cfg.k_slc) != res.selected[i]) ++mismatches;
      const std::size_t bound = res.compressed[i] + cfg.k_slc * cfg.b_slc + cfg.window;
      if (res.attended[i] > bound) over = std::max(over, res.attended[i] - bound);
    }
    const std::string p = detail::fmt_params("N", n, "b", b, "k_slc", cfg.k_slc, "w", cfg.window, "ties", ties);
    rec.add("selection-vs-brute-force", p, double(mismatches), 0.0);
    rec.add("attended-bound", p, double(over), 0.0);
  }
  return rec.take();
}

// End-to-end demo gradient against central differences of the loss.
inline double demo_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  const RecallTask task = RecallTask::make(6, 2, 2, 2, 8, rng);
  DemoParams params = DemoParams::init(4, 4, 2, 2, rng);
  params.gate.b_gate = random_normal<double>(1, 2, rng, 0.5);
  params.gate.w_beta = random_normal<double>(4, 2, rng, 0.5);
  const std::size_t block = 4;
  const DemoGrads g = demo_backward(task, params, demo_forward(task, params, block), block);
  auto ps = params.tensors();
  auto gs = g.tensors();
  double err = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto fd = detail::central_gradient(
        ps[i]->values(), [&] { return demo_forward(task, params, block).loss; }, 1e-6);
    err = std::max(err, max_rel_error_d(gs[i]->values(), fd));
  }
  return err;
}

inline std::vector<CheckRecord> check_layer(const CheckOptions& opts = {}) {
  detail::Recorder rec("layer");
  rec.add("demo-gradient-vs-fd", "N=8 d=4 H=2", demo_gradient_error(opts.seed), 1e-4);

  DemoConfig dc;
  dc.seed = opts.seed;
  const DemoResult dr = train_demo(dc);
  std::ostringstream verdict;
  verdict << "initial " << dr.losses.front() << ", final " << dr.losses.back();
  const double ratio = dr.diverged ? INFINITY : dr.losses.back() / dr.losses.front();
  rec.add("demo-loss-halves", detail::fmt_params("steps", dc.steps, "lr", dc.lr), ratio, 0.5, verdict.str());

  Rng rng(opts.seed ^ 0x1a7eULL);
  const AttnConfig one = AttnConfig::make(1, 4, 4, 4, 4, 2);
  LayerParams<double> lp = LayerParams<double>::init(8, 2, 16, rng);
  const MatrixD x1 = random_normal<double>(1, 8, rng);
  LayerOptions plain;
  plain.head_norm = false;
  plain.output_gate = false;
  const MatrixD passthrough = matmul(matmul(x1, lp.w_v), lp.w_o);
  rec.add("single-token-passthrough", "N=1", max_rel_error(attn_layer_forward(x1, lp, one, plain), passthrough),
          1e-12);

  const AttnConfig cfg = AttnConfig::make(64, 4, 16, 16, 16, 2);
  const MatrixD x = random_normal<double>(64, 8, rng);
  const MatrixD z = transformer_block_forward(x, lp, cfg);
  rec.add("block-forward-finite", "N=64 d=8 H=2 w=16", all_finite(z) ? 0.0 : INFINITY, 0.0);
  return rec.take();
}

// Runs one named suite, or every suite for "all". Unknown names throw.
inline std::vector<CheckRecord> run_suite(const std::string& name, const CheckOptions& opts = {}) {
  if (name == "all") {
    std::vector<CheckRecord> out;
    for (const auto& s : suite_names()) {
      auto part = run_suite(s, opts);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  if (name == "scan") return check_scan(opts);
  if (name == "attn-forward") return check_attn_forward(opts);
  if (name == "attn-backward") return check_attn_backward(opts);
  if (name == "recurrence") return check_recurrence(opts);
  if (name == "objective") return check_objective(opts);
  if (name == "nsa") return check_nsa(opts);
  if (name == "layer") return check_layer(opts);
  throw std::invalid_argument("unknown check suite: " + name);
}

}  // namespace gfwa
