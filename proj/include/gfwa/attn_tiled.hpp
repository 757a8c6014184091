#pragma once

// Tiled, streaming gated sliding-window attention.
//
// Forward: one pass per row block with an online softmax (running max m,
// running sum ell, rescaled accumulator). Only key tiles that intersect some
// row's window are visited, and entries outside the window are skipped, never
// materialized. The gate enters as the additive bias u_q - u_g.
//
// Backward: outer loop over key blocks, inner loop over the query blocks that
// can see them, probabilities recomputed from the saved log-normalizer L.
// dQ and dU^q partials are reduced into the outputs in ascending key-block
// order, so results do not depend on scheduling.
//
// Storage precision is T; every accumulator is double. Block indices are
// 0-based and tile ranges inclusive.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gfwa/attn_ref.hpp"
#include "gfwa/numerics.hpp"
#include "gfwa/parallel.hpp"

namespace gfwa {

struct TileRange {
  std::size_t first = 0;
  std::size_t last = 0;

  [[nodiscard]] std::size_t count() const { return last - first + 1; }
  friend bool operator==(const TileRange&, const TileRange&) = default;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Key tiles intersecting the windows of row block `row_block`.
inline TileRange key_tile_range(std::size_t row_block, const AttnConfig& cfg) {
  const std::size_t r_start = row_block * cfg.block_rows;
  const std::size_t r_end = std::min((row_block + 1) * cfg.block_rows, cfg.seq_len) - 1;
  const std::size_t k_lo = r_start + 1 > cfg.window ? r_start + 1 - cfg.window : 0;
  const std::size_t k_hi = r_end + 1;  // exclusive
  return {k_lo / cfg.block_cols, ceil_div(k_hi, cfg.block_cols) - 1};
}

// Query tiles whose windows can include key block `col_block`.
inline TileRange query_tile_range(std::size_t col_block, const AttnConfig& cfg) {
  const std::size_t g_start = col_block * cfg.block_cols;
  const std::size_t g_end = std::min((col_block + 1) * cfg.block_cols, cfg.seq_len) - 1;
  const std::size_t q_hi = std::min(cfg.seq_len, g_end + cfg.window);  // exclusive
  return {g_start / cfg.block_rows, ceil_div(q_hi, cfg.block_rows) - 1};
}

struct TileCounters {
  // Forward: key tiles per row block. Backward: query tiles per key block.
  std::vector<std::size_t> tiles_visited;
  std::size_t logit_evaluations = 0;  // in-window (query, key) pairs scored
  std::size_t tile_entries = 0;       // all entries of visited tiles, masked or not
  std::size_t scratch_elements = 0;   // peak on-chip working set, in elements
  std::map<std::string, std::size_t> elements_read;
  std::map<std::string, std::size_t> elements_written;

  [[nodiscard]] std::size_t total_tiles() const {
    std::size_t s = 0;
    for (auto t : tiles_visited) s += t;
    return s;
  }
  [[nodiscard]] std::size_t total_read() const {
    std::size_t s = 0;
    for (const auto& [name, n] : elements_read) s += n;
    return s;
  }
  [[nodiscard]] std::size_t total_written() const {
    std::size_t s = 0;
    for (const auto& [name, n] : elements_written) s += n;
    return s;
  }

  void merge(const TileCounters& o) {
    tiles_visited.insert(tiles_visited.end(), o.tiles_visited.begin(), o.tiles_visited.end());
    logit_evaluations += o.logit_evaluations;
    tile_entries += o.tile_entries;
    scratch_elements = std::max(scratch_elements, o.scratch_elements);
    for (const auto& [k, v] : o.elements_read) elements_read[k] += v;
    for (const auto& [k, v] : o.elements_written) elements_written[k] += v;
  }
};

// Snapshot of one row's streaming state after a key tile has been folded in.
struct StreamSnapshot {
  std::size_t row;
  std::size_t key_tile;
  double m;
  double ell;
};

struct KernelOptions {
  unsigned threads = 1;
  // Debug hook invoked after every (row, key tile). Observers force a
  // sequential schedule.
  std::function<void(const StreamSnapshot&)> observer;
};

template <typename T>
struct TiledForward {
  AttnOutput<T> out;
  TileCounters counters;
};

template <typename T>
struct TiledBackward {
  AttnGrads<T> grads;
  TileCounters counters;
};

inline constexpr double kStaleLTolerance = 1e-4;

namespace detail {

// On-chip buffers for one row block of the forward pass.
struct ForwardScratch {
  std::vector<double> q, k, v, uq, uk, s, m, ell, o;

  ForwardScratch(std::size_t br, std::size_t bc, std::size_t d)
      : q(br * d), k(bc * d), v(bc * d), uq(br), uk(bc), s(br * bc), m(br), ell(br), o(br * d) {}

  [[nodiscard]] std::size_t elements() const {
    return q.size() + k.size() + v.size() + uq.size() + uk.size() + s.size() + m.size() + ell.size() +
           o.size();
  }
};

template <typename T>
void load_rows(const BasicMatrix<T>& src, std::size_t begin, std::size_t count, std::vector<double>& dst) {
  const std::size_t d = src.cols();
  for (std::size_t r = 0; r < count; ++r) {
    const auto row = src.row(begin + r);
    for (std::size_t c = 0; c < d; ++c) dst[r * d + c] = row[c];
  }
}

template <typename T>
TileCounters forward_row_block(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                               std::span<const T> u, const AttnConfig& cfg, std::size_t block,
                               AttnOutput<T>& out, const KernelOptions& opts) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const std::size_t d = cfg.head_dim;
  const std::size_t br = cfg.block_rows;
  const std::size_t bc = cfg.block_cols;
  const std::size_t r_start = block * br;
  const std::size_t rows = std::min(br, cfg.seq_len - r_start);
  const bool gated = !u.empty();

  TileCounters tc;
  ForwardScratch sc(br, bc, d);
  tc.scratch_elements = sc.elements();

  load_rows(q, r_start, rows, sc.q);
  tc.elements_read["Q"] += rows * d;
  for (std::size_t r = 0; r < rows; ++r) sc.uq[r] = gated ? static_cast<double>(u[r_start + r]) : 0.0;
  if (gated) tc.elements_read["U"] += rows;
  std::fill(sc.m.begin(), sc.m.end(), kNegInf);
  std::fill(sc.ell.begin(), sc.ell.end(), 0.0);
  std::fill(sc.o.begin(), sc.o.end(), 0.0);

  const TileRange range = key_tile_range(block, cfg);
  tc.tiles_visited.push_back(range.count());
  for (std::size_t j = range.first; j <= range.last; ++j) {
    const std::size_t g_start = j * bc;
    const std::size_t cols = std::min(bc, cfg.seq_len - g_start);
    load_rows(k, g_start, cols, sc.k);
    load_rows(v, g_start, cols, sc.v);
    tc.elements_read["K"] += cols * d;
    tc.elements_read["V"] += cols * d;
    for (std::size_t c = 0; c < cols; ++c) sc.uk[c] = gated ? static_cast<double>(u[g_start + c]) : 0.0;
    if (gated) tc.elements_read["U"] += cols;
    tc.tile_entries += rows * cols;

    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t qi = r_start + r;
      double tile_max = kNegInf;
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t g = g_start + c;
        if (!cfg.in_window(qi, g)) {
          sc.s[r * bc + c] = kNegInf;
          continue;
        }
        double dotp = 0.0;
        for (std::size_t e = 0; e < d; ++e) dotp += sc.q[r * d + e] * sc.k[c * d + e];
        const double logit = cfg.scale * dotp + (sc.uq[r] - sc.uk[c]);
        if (!std::isfinite(logit)) throw NumericError("non-finite attention logit");
        sc.s[r * bc + c] = logit;
        tile_max = std::max(tile_max, logit);
        ++tc.logit_evaluations;
      }
      if (tile_max == kNegInf) continue;  // nothing of this row in the tile

      const double m_old = sc.m[r];
      const double m_new = std::max(m_old, tile_max);
      const double rescale = m_old == kNegInf ? 0.0 : std::exp(m_old - m_new);
      double tile_sum = 0.0;
      double* o_row = &sc.o[r * d];
      for (std::size_t e = 0; e < d; ++e) o_row[e] *= rescale;
      for (std::size_t c = 0; c < cols; ++c) {
        const double logit = sc.s[r * bc + c];
        if (logit == kNegInf) continue;
        const double p = std::exp(logit - m_new);
        tile_sum += p;
        for (std::size_t e = 0; e < d; ++e) o_row[e] += p * sc.v[c * d + e];
      }
      sc.m[r] = m_new;
      sc.ell[r] = rescale * sc.ell[r] + tile_sum;
      if (opts.observer) opts.observer({qi, j, sc.m[r], sc.ell[r]});
    }
  }

  for (std::size_t r = 0; r < rows; ++r) {
    // The diagonal key is always admissible.
    if (!(sc.ell[r] > 0.0)) throw NumericError("empty attention window");
    const double inv = 1.0 / sc.ell[r];
    for (std::size_t e = 0; e < d; ++e) out.o(r_start + r, e) = static_cast<T>(sc.o[r * d + e] * inv);
    out.l[r_start + r] = static_cast<T>(sc.m[r] + std::log(sc.ell[r]));
  }
  tc.elements_written["O"] += rows * d;
  tc.elements_written["L"] += rows;
  return tc;
}

}  // namespace detail

// Streaming forward for one head. An empty `u` runs plain sliding-window attention.
template <typename T>
TiledForward<T> forward_tiled(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                              std::span<const T> u, const AttnConfig& cfg, const KernelOptions& opts = {}) {
  detail::check_head_inputs(q, k, v, u, cfg);
  const std::size_t n = cfg.seq_len;
  TiledForward<T> res{{BasicMatrix<T>(n, cfg.head_dim), std::vector<T>(n)}, {}};
  if (n == 0) return res;
  const std::size_t blocks = ceil_div(n, cfg.block_rows);
  std::vector<TileCounters> per_block(blocks);
  const unsigned threads = opts.observer ? 1u : opts.threads;
  parallel_for(blocks, threads, [&](std::size_t i) {
    per_block[i] = detail::forward_row_block(q, k, v, u, cfg, i, res.out, opts);
  });
  for (const auto& tc : per_block) res.counters.merge(tc);
  return res;
}

template <typename T>
TiledBackward<T> backward_tiled(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                                std::span<const T> u, const AttnConfig& cfg, const BasicMatrix<T>& o,
                                std::span<const T> l, const BasicMatrix<T>& d_o) {
  detail::check_head_inputs(q, k, v, u, cfg);
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.head_dim;
  const std::size_t br = cfg.block_rows;
  const std::size_t bc = cfg.block_cols;
  require_shape(o.rows() == n && o.cols() == d && d_o.rows() == n && d_o.cols() == d, "backward: O/dO shape");
  require_shape(l.size() == n, "backward: L length");
  const bool gated = !u.empty();

  TiledBackward<T> res;
  TileCounters& tc = res.counters;

  // D = rowsum(O * dO)
  std::vector<double> big_d(n);
  for (std::size_t i = 0; i < n; ++i) big_d[i] = detail::dot(o.row(i), d_o.row(i));
  tc.elements_read["O"] += n * d;
  tc.elements_read["dO"] += n * d;

  MatrixD dq(n, d), dk(n, d), dv(n, d);
  std::vector<double> duq(n, 0.0), duk(n, 0.0), prob_mass(n, 0.0);

  // On-chip: k, v, dk, dv, uk, duk (B_c); q, dO, L, D, uq, dq, duq (B_r).
  std::vector<double> kb(bc * d), vb(bc * d), dkb(bc * d), dvb(bc * d), ukb(bc), dukb(bc);
  std::vector<double> qb(br * d), dob(br * d), lb(br), db(br), uqb(br), dqb(br * d), duqb(br);
  tc.scratch_elements = kb.size() + vb.size() + dkb.size() + dvb.size() + ukb.size() + dukb.size() +
                        qb.size() + dob.size() + lb.size() + db.size() + uqb.size() + dqb.size() + duqb.size();

  const std::size_t col_blocks = n == 0 ? 0 : ceil_div(n, bc);
  for (std::size_t j = 0; j < col_blocks; ++j) {
    const std::size_t g_start = j * bc;
    const std::size_t cols = std::min(bc, n - g_start);
    detail::load_rows(k, g_start, cols, kb);
    detail::load_rows(v, g_start, cols, vb);
    tc.elements_read["K"] += cols * d;
    tc.elements_read["V"] += cols * d;
    for (std::size_t c = 0; c < cols; ++c) ukb[c] = gated ? static_cast<double>(u[g_start + c]) : 0.0;
    if (gated) tc.elements_read["U"] += cols;
    std::fill(dkb.begin(), dkb.end(), 0.0);
    std::fill(dvb.begin(), dvb.end(), 0.0);
    std::fill(dukb.begin(), dukb.end(), 0.0);

    const TileRange range = query_tile_range(j, cfg);
    tc.tiles_visited.push_back(range.count());
    for (std::size_t i = range.first; i <= range.last; ++i) {
      const std::size_t r_start = i * br;
      const std::size_t rows = std::min(br, n - r_start);
      detail::load_rows(q, r_start, rows, qb);
      detail::load_rows(d_o, r_start, rows, dob);
      for (std::size_t r = 0; r < rows; ++r) {
        lb[r] = l[r_start + r];
        db[r] = big_d[r_start + r];
        uqb[r] = gated ? static_cast<double>(u[r_start + r]) : 0.0;
      }
      tc.elements_read["Q"] += rows * d;
      tc.elements_read["dO"] += rows * d;
      tc.elements_read["L"] += rows;
      tc.elements_read["D"] += rows;
      if (gated) tc.elements_read["U"] += rows;
      std::fill(dqb.begin(), dqb.end(), 0.0);
      std::fill(duqb.begin(), duqb.end(), 0.0);
      tc.tile_entries += rows * cols;

      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t qi = r_start + r;
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t g = g_start + c;
          if (!cfg.in_window(qi, g)) continue;
          ++tc.logit_evaluations;
          double qk = 0.0;
          double dp = 0.0;
          for (std::size_t e = 0; e < d; ++e) {
            qk += qb[r * d + e] * kb[c * d + e];
            dp += dob[r * d + e] * vb[c * d + e];
          }
          const double s = cfg.scale * qk + (uqb[r] - ukb[c]);
          const double p = std::exp(s - lb[r]);
          const double ds = p * (dp - db[r]);
          prob_mass[qi] += p;
          for (std::size_t e = 0; e < d; ++e) {
            dvb[c * d + e] += p * dob[r * d + e];
            dqb[r * d + e] += cfg.scale * ds * kb[c * d + e];
            dkb[c * d + e] += cfg.scale * ds * qb[r * d + e];
          }
          duqb[r] += ds;
          dukb[c] -= ds;
        }
      }

      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t e = 0; e < d; ++e) dq(r_start + r, e) += dqb[r * d + e];
        duq[r_start + r] += duqb[r];
      }
      tc.elements_read["dQ"] += rows * d;
      tc.elements_written["dQ"] += rows * d;
      if (gated) {
        tc.elements_read["dU"] += rows;
        tc.elements_written["dU"] += rows;
      }
    }

    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t e = 0; e < d; ++e) {
        dk(g_start + c, e) = dkb[c * d + e];
        dv(g_start + c, e) = dvb[c * d + e];
      }
      duk[g_start + c] = dukb[c];
    }
    tc.elements_written["dK"] += cols * d;
    tc.elements_written["dV"] += cols * d;
    if (gated) tc.elements_written["dU"] += cols;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(prob_mass[i] - 1.0) > kStaleLTolerance) {
      throw NumericError("stale log-normalizer: reconstructed probabilities do not sum to 1");
    }
  }

  res.grads.d_q = dq.cast<T>();
  res.grads.d_k = dk.cast<T>();
  res.grads.d_v = dv.cast<T>();
  res.grads.d_u.assign(n, T{0});
  if (gated) {
    for (std::size_t i = 0; i < n; ++i) res.grads.d_u[i] = static_cast<T>(duq[i] + duk[i]);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Multi-head wrappers: Q, K, V are N x (H d_h), U is N x H, L comes back N x H.

template <typename T>
struct MultiHeadForward {
  BasicMatrix<T> o;
  BasicMatrix<T> l;
  TileCounters counters;
};

template <typename T>
struct MultiHeadBackward {
  BasicMatrix<T> d_q, d_k, d_v, d_u;
  TileCounters counters;
};

template <typename T>
MultiHeadForward<T> forward_tiled_heads(const BasicMatrix<T>& q, const BasicMatrix<T>& k,
                                        const BasicMatrix<T>& v, const BasicMatrix<T>& u,
                                        const AttnConfig& cfg, const KernelOptions& opts = {}) {
  const std::size_t heads = cfg.heads;
  const std::size_t d_h = cfg.head_dim;
  require_shape(q.cols() == heads * d_h, "multi-head input width must be H * d_h");
  require_shape(u.empty() || (u.rows() == cfg.seq_len && u.cols() == heads), "U must be N x H");
  MultiHeadForward<T> res{BasicMatrix<T>(cfg.seq_len, heads * d_h), BasicMatrix<T>(cfg.seq_len, heads), {}};
  std::vector<TiledForward<T>> per_head(heads);
  KernelOptions inner = opts;
  inner.threads = 1;
  parallel_for(heads, opts.observer ? 1u : opts.threads, [&](std::size_t h) {
    const std::vector<T> uh = u.empty() ? std::vector<T>{} : column_of(u, h);
    per_head[h] = forward_tiled<T>(head_slice(q, h, d_h), head_slice(k, h, d_h), head_slice(v, h, d_h), uh,
                                   cfg, inner);
  });
  for (std::size_t h = 0; h < heads; ++h) {
    set_head_slice(res.o, h, per_head[h].out.o);
    for (std::size_t i = 0; i < cfg.seq_len; ++i) res.l(i, h) = per_head[h].out.l[i];
    res.counters.merge(per_head[h].counters);
  }
  return res;
}

template <typename T>
MultiHeadBackward<T> backward_tiled_heads(const BasicMatrix<T>& q, const BasicMatrix<T>& k,
                                          const BasicMatrix<T>& v, const BasicMatrix<T>& u,
                                          const AttnConfig& cfg, const BasicMatrix<T>& o,
                                          const BasicMatrix<T>& l, const BasicMatrix<T>& d_o,
                                          unsigned threads = 1) {
  const std::size_t heads = cfg.heads;
  const std::size_t d_h = cfg.head_dim;
  const std::size_t n = cfg.seq_len;
  require_shape(l.rows() == n && l.cols() == heads, "L must be N x H");
  MultiHeadBackward<T> res{BasicMatrix<T>(n, heads * d_h), BasicMatrix<T>(n, heads * d_h),
                           BasicMatrix<T>(n, heads * d_h), BasicMatrix<T>(n, heads), {}};
  std::vector<TiledBackward<T>> per_head(heads);
  parallel_for(heads, threads, [&](std::size_t h) {
    const std::vector<T> uh = u.empty() ? std::vector<T>{} : column_of(u, h);
    const std::vector<T> lh = column_of(l, h);
    per_head[h] = backward_tiled<T>(head_slice(q, h, d_h), head_slice(k, h, d_h), head_slice(v, h, d_h), uh,
                                    cfg, head_slice(o, h, d_h), lh, head_slice(d_o, h, d_h));
  });
  for (std::size_t h = 0; h < heads; ++h) {
    set_head_slice(res.d_q, h, per_head[h].grads.d_q);
    set_head_slice(res.d_k, h, per_head[h].grads.d_k);
    set_head_slice(res.d_v, h, per_head[h].grads.d_v);
    for (std::size_t i = 0; i < n; ++i) res.d_u(i, h) = per_head[h].grads.d_u[i];
    res.counters.merge(per_head[h].counters);
  }
  return res;
}

}  // namespace gfwa
