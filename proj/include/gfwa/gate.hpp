#pragma once

// Data-dependent memory gate and its cumulative decay prefix.
//
//   h     = x W_g + b_g
//   beta  = 1 + elu(x W_beta)
//   alpha = softplus(beta * h) / (beta + eps)
//   U[t]  = -sum_{q <= t} alpha[q]
//
// Three interchangeable scans produce U: a naive cumsum over a materialized
// alpha, a single streaming pass with a per-head carry, and a three-phase
// scan-then-propagate. All of them accumulate in double.

#include <cmath>
#include <cstddef>
#include <vector>

#include "gfwa/numerics.hpp"
#include "gfwa/parallel.hpp"

namespace gfwa {

inline constexpr double kGateEps = 1e-6;

template <typename T>
struct GateParams {
  BasicMatrix<T> w_gate;  // d x H
  BasicMatrix<T> b_gate;  // 1 x H
  BasicMatrix<T> w_beta;  // d x H

  [[nodiscard]] std::size_t input_dim() const { return w_gate.rows(); }
  [[nodiscard]] std::size_t heads() const { return w_gate.cols(); }

  static GateParams zeros(std::size_t d, std::size_t heads) {
    return {BasicMatrix<T>(d, heads), BasicMatrix<T>(1, heads), BasicMatrix<T>(d, heads)};
  }

  // Random W_g; b_g and W_beta start at zero so beta == 1 everywhere.
  static GateParams init(std::size_t d, std::size_t heads, Rng& rng) {
    GateParams p = zeros(d, heads);
    p.w_gate = random_normal<T>(d, heads, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    return p;
  }

  void validate() const {
    require_shape(b_gate.rows() == 1 && b_gate.cols() == heads(), "gate bias must be 1 x H");
    require_shape(w_beta.rows() == w_gate.rows() && w_beta.cols() == w_gate.cols(),
                  "W_beta must match W_g");
  }
};

template <typename T>
struct GateState {
  BasicMatrix<T> h_pre;  // N x H
  BasicMatrix<T> beta;   // N x H, > 0
  BasicMatrix<T> alpha;  // N x H, > 0
  BasicMatrix<T> u;      // N x H, strictly decreasing per column
};

// Element access counts for the scan kernels. `workspace_*` covers the
// per-chunk aggregates of the three-phase scan.
struct ScanCounters {
  std::size_t reads_h = 0;
  std::size_t reads_beta = 0;
  std::size_t writes_u = 0;
  std::size_t workspace_reads = 0;
  std::size_t workspace_writes = 0;

  [[nodiscard]] std::size_t input_reads() const { return reads_h + reads_beta; }
};

inline double gate_alpha(double h, double beta, double eps) {
  return softplus_safe(beta * h) / (beta + eps);
}

template <typename T>
GateState<T> gate_forward(const BasicMatrix<T>& x, const GateParams<T>& p, double eps = kGateEps) {
  p.validate();
  require_shape(x.cols() == p.input_dim(), "gate_forward: x.cols != d");
  require_finite(x, "gate input");
  GateState<T> s;
  s.h_pre = matmul(x, p.w_gate);
  for (std::size_t t = 0; t < s.h_pre.rows(); ++t)
    for (std::size_t h = 0; h < p.heads(); ++h) s.h_pre(t, h) += p.b_gate(0, h);
  s.beta = map(matmul(x, p.w_beta), [](double a) { return 1.0 + elu(a); });
  s.alpha = BasicMatrix<T>(x.rows(), p.heads());
  for (std::size_t i = 0; i < s.alpha.size(); ++i) {
    s.alpha.values()[i] = static_cast<T>(gate_alpha(s.h_pre.values()[i], s.beta.values()[i], eps));
  }
  require_finite(s.h_pre, "gate pre-activation");
  require_finite(s.alpha, "gate alpha");
  return s;
}

template <typename T>
BasicMatrix<T> scan_naive(const BasicMatrix<T>& alpha) {
  BasicMatrix<T> u(alpha.rows(), alpha.cols());
  for (std::size_t h = 0; h < alpha.cols(); ++h) {
    double acc = 0.0;
    for (std::size_t t = 0; t < alpha.rows(); ++t) {
      acc -= static_cast<double>(alpha(t, h));
      u(t, h) = static_cast<T>(acc);
    }
  }
  return u;
}

namespace detail {

inline void require_chunk(std::size_t chunk, std::size_t n) {
  if (chunk < 1 || (n > 0 && chunk > n)) throw ShapeError("scan chunk size must satisfy 1 <= B_t <= N");
}

}  // namespace detail

// Fused tiled scan: one pass per head, h and beta read once, U written once,
// a double carry threaded between chunks. The final chunk is simply shorter.
template <typename T>
BasicMatrix<T> scan_onepass(const BasicMatrix<T>& h_pre, const BasicMatrix<T>& beta, std::size_t chunk,
                            double eps = kGateEps, ScanCounters* counters = nullptr) {
  require_shape(h_pre.rows() == beta.rows() && h_pre.cols() == beta.cols(), "scan: H and beta differ");
  const std::size_t n = h_pre.rows();
  detail::require_chunk(chunk, n);
  BasicMatrix<T> u(n, h_pre.cols());
  ScanCounters local;
  for (std::size_t head = 0; head < h_pre.cols(); ++head) {
    double carry = 0.0;
    for (std::size_t start = 0; start < n; start += chunk) {
      const std::size_t end = std::min(start + chunk, n);
      double partial = 0.0;
      for (std::size_t t = start; t < end; ++t) {
        const double hv = h_pre(t, head);
        const double bv = beta(t, head);
        local.reads_h += 1;
        local.reads_beta += 1;
        partial -= gate_alpha(hv, bv, eps);
        u(t, head) = static_cast<T>(carry + partial);
        local.writes_u += 1;
      }
      carry += partial;
    }
  }
  if (counters) *counters = local;
  return u;
}

// Scan-then-propagate: per-chunk reductions, a sequential scan over the
// ceil(N/B_t) aggregates, then a downsweep that recomputes alpha in-chunk.
template <typename T>
BasicMatrix<T> scan_three_phase(const BasicMatrix<T>& h_pre, const BasicMatrix<T>& beta, std::size_t chunk,
                                double eps = kGateEps, ScanCounters* counters = nullptr,
                                unsigned threads = 1) {
  require_shape(h_pre.rows() == beta.rows() && h_pre.cols() == beta.cols(), "scan: H and beta differ");
  const std::size_t n = h_pre.rows();
  const std::size_t heads = h_pre.cols();
  detail::require_chunk(chunk, n);
  const std::size_t chunks = n == 0 ? 0 : (n + chunk - 1) / chunk;

  std::vector<double> sums(chunks * heads, 0.0);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t start = c * chunk;
    const std::size_t end = std::min(start + chunk, n);
    for (std::size_t head = 0; head < heads; ++head) {
      double s = 0.0;
      for (std::size_t t = start; t < end; ++t) s -= gate_alpha(h_pre(t, head), beta(t, head), eps);
      sums[c * heads + head] = s;
    }
  });

  // Exclusive offsets: offsets[c] is the total of all chunks before c.
  std::vector<double> offsets(chunks * heads, 0.0);
  for (std::size_t head = 0; head < heads; ++head) {
    double running = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
      offsets[c * heads + head] = running;
      running += sums[c * heads + head];
    }
  }

  BasicMatrix<T> u(n, heads);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t start = c * chunk;
    const std::size_t end = std::min(start + chunk, n);
    for (std::size_t head = 0; head < heads; ++head) {
      const double carry = offsets[c * heads + head];
      double partial = 0.0;
      for (std::size_t t = start; t < end; ++t) {
        partial -= gate_alpha(h_pre(t, head), beta(t, head), eps);
        u(t, head) = static_cast<T>(carry + partial);
      }
    }
  });

  if (counters) {
    counters->reads_h = 2 * n * heads;
    counters->reads_beta = 2 * n * heads;
    counters->writes_u = n * heads;
    counters->workspace_writes = 2 * chunks * heads;
    counters->workspace_reads = 2 * chunks * heads;
  }
  return u;
}

// Gate forward followed by the one-pass scan.
template <typename T>
GateState<T> gate_preprocess(const BasicMatrix<T>& x, const GateParams<T>& p, std::size_t chunk = 64,
                             double eps = kGateEps) {
  GateState<T> s = gate_forward(x, p, eps);
  s.u = scan_onepass(s.h_pre, s.beta, std::min(chunk, std::max<std::size_t>(x.rows(), 1)), eps);
  return s;
}

// U (N x H) from a randomly drawn gate applied to random inputs, with the
// bias and beta weights perturbed away from their initial values.
inline MatrixD random_gate_prefix(std::size_t n, std::size_t heads, Rng& rng) {
  const std::size_t d = 4;
  const MatrixD x = random_normal<double>(n, d, rng);
  GateParams<double> p = GateParams<double>::init(d, heads, rng);
  p.b_gate = random_normal<double>(1, heads, rng, 0.5);
  p.w_beta = random_normal<double>(d, heads, rng, 0.3);
  return gate_preprocess(x, p, std::max<std::size_t>(std::min<std::size_t>(16, n), 1)).u;
}

template <typename T>
struct GateGrads {
  BasicMatrix<T> d_h_pre;     // N x H
  BasicMatrix<T> d_beta_pre;  // N x H, w.r.t. x W_beta
  BasicMatrix<T> d_w_gate;    // d x H
  BasicMatrix<T> d_b_gate;    // 1 x H
  BasicMatrix<T> d_w_beta;    // d x H
  BasicMatrix<T> d_x;         // N x d, gate path only
};

// Backward of U through alpha, beta and h. The (beta + eps) denominator is
// differentiated as written, so eps is part of the gradient path too.
template <typename T>
GateGrads<T> gate_backward(const BasicMatrix<T>& d_u, const GateState<T>& state, const BasicMatrix<T>& x,
                           const GateParams<T>& p, double eps = kGateEps) {
  const std::size_t n = state.h_pre.rows();
  const std::size_t heads = state.h_pre.cols();
  require_shape(d_u.rows() == n && d_u.cols() == heads, "gate_backward: dU shape");
  require_shape(state.beta.rows() == n && state.beta.cols() == heads, "gate_backward: state shape");
  require_shape(x.rows() == n && x.cols() == p.input_dim() && p.heads() == heads, "gate_backward: x / params");

  GateGrads<T> g;
  g.d_h_pre = BasicMatrix<T>(n, heads);
  g.d_beta_pre = BasicMatrix<T>(n, heads);
  for (std::size_t head = 0; head < heads; ++head) {
    double suffix = 0.0;
    for (std::size_t q = n; q-- > 0;) {
      suffix += d_u(q, head);
      const double d_alpha = -suffix;
      const double hv = state.h_pre(q, head);
      const double bv = state.beta(q, head);
      const double z = bv * hv;
      const double sig = sigmoid(z);
      const double den = bv + eps;
      const double dalpha_dh = sig * bv / den;
      const double dalpha_dbeta = (sig * hv * den - softplus_safe(z)) / (den * den);
      // beta = 1 + elu(a): elu'(a) is 1 for beta >= 1 and e^a = beta otherwise.
      const double elu_prime = bv >= 1.0 ? 1.0 : bv;
      g.d_h_pre(q, head) = static_cast<T>(d_alpha * dalpha_dh);
      g.d_beta_pre(q, head) = static_cast<T>(d_alpha * dalpha_dbeta * elu_prime);
    }
  }
  g.d_w_gate = matmul_tn(x, g.d_h_pre);
  g.d_b_gate = colsum(g.d_h_pre);
  g.d_w_beta = matmul_tn(x, g.d_beta_pre);
  g.d_x = matmul_nt(g.d_h_pre, p.w_gate) + matmul_nt(g.d_beta_pre, p.w_beta);
  return g;
}

}  // namespace gfwa
