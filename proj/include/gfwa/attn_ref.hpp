#pragma once

// Dense O(N^2) reference attention: full causal softmax, sliding window, and
// gated sliding window with the decay-bias ladder B_ij = u_i - u_j. These
// materialize the masked score matrix and are the ground truth for the tiled
// kernels.
//
// The logit scale multiplies q k^T only; the bias is added unscaled. Windows
// are clipped at position 0, so query i sees keys [max(0, i-w+1), i].

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "gfwa/numerics.hpp"

namespace gfwa {

struct AttnConfig {
  std::size_t seq_len = 0;
  std::size_t head_dim = 0;
  std::size_t heads = 1;
  std::size_t window = 1;
  double scale = 1.0;
  std::size_t block_rows = 64;
  std::size_t block_cols = 64;

  static AttnConfig make(std::size_t n, std::size_t d_h, std::size_t w, std::size_t br = 64,
                         std::size_t bc = 64, std::size_t heads = 1) {
    AttnConfig c;
    c.seq_len = n;
    c.head_dim = d_h;
    c.heads = heads;
    c.window = w;
    c.scale = 1.0 / std::sqrt(static_cast<double>(d_h));
    c.block_rows = br;
    c.block_cols = bc;
    return c;
  }

  void validate() const {
    if (window < 1) throw ShapeError("window must be >= 1");
    if (block_rows < 1 || block_cols < 1) throw ShapeError("tile sizes must be >= 1");
    if (!(scale > 0.0)) throw ShapeError("logit scale must be positive");
    if (heads < 1) throw ShapeError("heads must be >= 1");
  }

  // First admissible key for query i.
  [[nodiscard]] std::size_t window_begin(std::size_t i) const { return i + 1 > window ? i + 1 - window : 0; }
  [[nodiscard]] bool in_window(std::size_t q, std::size_t g) const { return g <= q && q - g < window; }
};

template <typename T>
struct AttnOutput {
  BasicMatrix<T> o;  // N x d_h
  std::vector<T> l;  // per-row log-sum-exp of the masked, biased logits
};

template <typename T>
struct AttnGrads {
  BasicMatrix<T> d_q;
  BasicMatrix<T> d_k;
  BasicMatrix<T> d_v;
  std::vector<T> d_u;
};

namespace detail {

template <typename T>
void check_head_inputs(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                       std::span<const T> u, const AttnConfig& cfg) {
  cfg.validate();
  require_shape(q.rows() == cfg.seq_len && k.rows() == cfg.seq_len && v.rows() == cfg.seq_len,
                "attention inputs must have N rows");
  require_shape(q.cols() == cfg.head_dim && k.cols() == cfg.head_dim && v.cols() == cfg.head_dim,
                "attention inputs must have d_h columns");
  require_shape(u.empty() || u.size() == cfg.seq_len, "gate prefix must have N entries");
}

template <typename T>
double dot(std::span<const T> a, std::span<const T> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Dense masked logits, -inf outside the window. Only used by the reference path.
template <typename T>
MatrixD dense_logits(const BasicMatrix<T>& q, const BasicMatrix<T>& k, std::span<const T> u,
                     const AttnConfig& cfg) {
  const std::size_t n = cfg.seq_len;
  MatrixD s(n, n, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = cfg.window_begin(i); j <= i; ++j) {
      double logit = cfg.scale * dot(q.row(i), k.row(j));
      if (!u.empty()) logit += static_cast<double>(u[i]) - static_cast<double>(u[j]);
      s(i, j) = logit;
    }
  }
  return s;
}

}  // namespace detail

// Dense masked probability matrix (zeros outside the window).
template <typename T>
MatrixD ref_probabilities(const BasicMatrix<T>& q, const BasicMatrix<T>& k, std::span<const T> u,
                          const AttnConfig& cfg) {
  const MatrixD s = detail::dense_logits(q, k, u, cfg);
  MatrixD p(cfg.seq_len, cfg.seq_len);
  for (std::size_t i = 0; i < cfg.seq_len; ++i) {
    const std::size_t lo = cfg.window_begin(i);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = lo; j <= i; ++j) m = std::max(m, s(i, j));
    double z = 0.0;
    for (std::size_t j = lo; j <= i; ++j) z += std::exp(s(i, j) - m);
    for (std::size_t j = lo; j <= i; ++j) p(i, j) = std::exp(s(i, j) - m) / z;
  }
  return p;
}

template <typename T>
AttnOutput<T> ref_gatedfwa(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                           std::span<const T> u, const AttnConfig& cfg) {
  detail::check_head_inputs(q, k, v, u, cfg);
  const std::size_t n = cfg.seq_len;
  const MatrixD s = detail::dense_logits(q, k, u, cfg);
  AttnOutput<T> out{BasicMatrix<T>(n, cfg.head_dim), std::vector<T>(n)};
  std::vector<double> acc(cfg.head_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = cfg.window_begin(i);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = lo; j <= i; ++j) m = std::max(m, s(i, j));
    double z = 0.0;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = lo; j <= i; ++j) {
      const double p = std::exp(s(i, j) - m);
      z += p;
      const auto vj = v.row(j);
      for (std::size_t c = 0; c < cfg.head_dim; ++c) acc[c] += p * vj[c];
    }
    for (std::size_t c = 0; c < cfg.head_dim; ++c) out.o(i, c) = static_cast<T>(acc[c] / z);
    out.l[i] = static_cast<T>(m + std::log(z));
  }
  require_finite(out.o, "reference attention output");
  return out;
}

template <typename T>
AttnOutput<T> ref_swa(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                      const AttnConfig& cfg) {
  return ref_gatedfwa<T>(q, k, v, {}, cfg);
}

template <typename T>
AttnOutput<T> ref_softmax_full(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                               AttnConfig cfg) {
  cfg.window = std::max<std::size_t>(cfg.seq_len, 1);
  return ref_gatedfwa<T>(q, k, v, {}, cfg);
}

// Dense backward through the biased, masked softmax.
//   D = rowsum(O * dO), ds = p * (dp - D), dq = scale ds k, dk = scale ds^T q,
//   dU[i] += rowsum(ds)_i (query role), dU[j] -= colsum(ds)_j (key role).
template <typename T>
AttnGrads<T> ref_backward(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                          std::span<const T> u, const AttnConfig& cfg, const BasicMatrix<T>& d_o) {
  detail::check_head_inputs(q, k, v, u, cfg);
  require_shape(d_o.rows() == cfg.seq_len && d_o.cols() == cfg.head_dim, "dO shape");
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.head_dim;
  const MatrixD p = ref_probabilities(q, k, u, cfg);
  const AttnOutput<T> fwd = ref_gatedfwa(q, k, v, u, cfg);

  MatrixD ds(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double big_d = detail::dot(fwd.o.row(i), d_o.row(i));
    for (std::size_t j = cfg.window_begin(i); j <= i; ++j) {
      const double dp = detail::dot(d_o.row(i), v.row(j));
      ds(i, j) = p(i, j) * (dp - big_d);
    }
  }

  MatrixD dq(n, d), dk(n, d), dv(n, d);
  std::vector<double> du(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = cfg.window_begin(i); j <= i; ++j) {
      for (std::size_t c = 0; c < d; ++c) {
        dv(j, c) += p(i, j) * d_o(i, c);
        dq(i, c) += cfg.scale * ds(i, j) * k(j, c);
        dk(j, c) += cfg.scale * ds(i, j) * q(i, c);
      }
      du[i] += ds(i, j);
      du[j] -= ds(i, j);
    }
  }
  AttnGrads<T> g{dq.cast<T>(), dk.cast<T>(), dv.cast<T>(), std::vector<T>(n)};
  if (u.empty()) std::fill(du.begin(), du.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) g.d_u[i] = static_cast<T>(du[i]);
  return g;
}

// Column h of an N x H matrix.
template <typename T>
std::vector<T> column_of(const BasicMatrix<T>& m, std::size_t h) {
  std::vector<T> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, h);
  return out;
}

// Columns [h*d_h, (h+1)*d_h) of a multi-head activation.
template <typename T>
BasicMatrix<T> head_slice(const BasicMatrix<T>& m, std::size_t h, std::size_t d_h) {
  require_shape((h + 1) * d_h <= m.cols(), "head_slice out of range");
  BasicMatrix<T> out(m.rows(), d_h);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < d_h; ++c) out(i, c) = m(i, h * d_h + c);
  return out;
}

template <typename T>
void set_head_slice(BasicMatrix<T>& m, std::size_t h, const BasicMatrix<T>& block) {
  const std::size_t d_h = block.cols();
  require_shape(block.rows() == m.rows() && (h + 1) * d_h <= m.cols(), "set_head_slice shape");
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < d_h; ++c) m(i, h * d_h + c) = block(i, c);
}

}  // namespace gfwa
