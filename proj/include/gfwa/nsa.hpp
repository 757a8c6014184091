#pragma once

// Three-branch sparse attention with the gated sliding window as its local
// branch:
//
//   compression  mean-pooled blocks of K/V, i in [0, floor((t - b_cmp)/s_cmp))
//   selection    top-k raw blocks ranked by compressed-attention probability
//   local        gated sliding window over the last w tokens
//
//   o_t = g_cmp o_cmp + g_slc o_slc + g_loc o_loc,  g = sigmoid(q_t W + b)
//
// `t` in the per-token functions is the number of visible tokens (rows
// 0..t-1), so the query attends only to keys with index < t.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "gfwa/attn_tiled.hpp"
#include "gfwa/numerics.hpp"

namespace gfwa {

struct NSAConfig {
  std::size_t b_cmp = 16;
  std::size_t s_cmp = 16;
  std::size_t b_slc = 16;
  std::size_t k_slc = 2;
  std::size_t window = 16;

  void validate() const {
    if (b_cmp < 1 || s_cmp < 1 || b_slc < 1 || k_slc < 1 || window < 1) {
      throw ShapeError("NSA block sizes, k_slc and window must be >= 1");
    }
  }
  [[nodiscard]] bool aligned() const { return b_cmp == b_slc && s_cmp == b_slc; }
};

struct BranchGates {
  double cmp = 0.0;
  double slc = 0.0;
  double loc = 0.0;
};

template <typename T>
struct NSAParams {
  BasicMatrix<T> w_branch;                    // d_h x 3 (cmp, slc, loc)
  BasicMatrix<T> b_branch;                    // 1 x 3
  std::optional<BasicMatrix<T>> cmp_linear;   // optional d_h x d_h after pooling

  // Zero weights, so every gate starts at sigmoid(0) = 0.5.
  static NSAParams zeros(std::size_t d_h) { return {BasicMatrix<T>(d_h, 3), BasicMatrix<T>(1, 3), std::nullopt}; }
};

template <typename T>
struct CompressedKV {
  BasicMatrix<T> k;
  BasicMatrix<T> v;
};

template <typename T>
struct SelectedKV {
  BasicMatrix<T> k;
  BasicMatrix<T> v;
  std::vector<std::size_t> blocks;  // ascending
  std::vector<double> scores;       // one per candidate block
};

inline std::size_t compressed_block_count(std::size_t t, const NSAConfig& cfg) {
  return t < cfg.b_cmp ? 0 : (t - cfg.b_cmp) / cfg.s_cmp;
}

template <typename T>
CompressedKV<T> compress_kv(const BasicMatrix<T>& k, const BasicMatrix<T>& v, std::size_t t, const NSAConfig& cfg,
                            const std::optional<BasicMatrix<T>>& linear = std::nullopt) {
  cfg.validate();
  require_shape(t <= k.rows() && k.rows() == v.rows(), "compress_kv: t exceeds sequence");
  const std::size_t blocks = compressed_block_count(t, cfg);
  CompressedKV<T> out{BasicMatrix<T>(blocks, k.cols()), BasicMatrix<T>(blocks, v.cols())};
  for (std::size_t i = 0; i < blocks; ++i) {
    const std::size_t start = i * cfg.s_cmp;
    for (std::size_t c = 0; c < k.cols(); ++c) {
      double sk = 0.0;
      double sv = 0.0;
      for (std::size_t r = start; r < start + cfg.b_cmp; ++r) {
        sk += k(r, c);
        sv += v(r, c);
      }
      out.k(i, c) = static_cast<T>(sk / static_cast<double>(cfg.b_cmp));
      out.v(i, c) = static_cast<T>(sv / static_cast<double>(cfg.b_cmp));
    }
  }
  if (linear && blocks > 0) {
    out.k = matmul(out.k, *linear);
    out.v = matmul(out.v, *linear);
  }
  return out;
}

// Softmax attention of a single query over a key/value set. Empty sets give
// the zero vector and empty probabilities.
template <typename T>
std::vector<double> attend_single(std::span<const T> q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                                  double scale, std::vector<double>* probs = nullptr) {
  std::vector<double> out(v.cols(), 0.0);
  if (k.rows() == 0) {
    if (probs) probs->clear();
    return out;
  }
  std::vector<double> logits(k.rows());
  for (std::size_t j = 0; j < k.rows(); ++j) logits[j] = scale * detail::dot(q, k.row(j));
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& x : logits) {
    x = std::exp(x - m);
    z += x;
  }
  for (std::size_t j = 0; j < k.rows(); ++j) {
    logits[j] /= z;
    for (std::size_t c = 0; c < v.cols(); ++c) out[c] += logits[j] * v(j, c);
  }
  if (probs) *probs = std::move(logits);
  return out;
}

// Top-k_slc blocks by compressed-attention probability, ties to the lower
// block index; the raw rows of the chosen blocks are concatenated in index order.
template <typename T>
SelectedKV<T> select_blocks(std::span<const T> q_t, const BasicMatrix<T>& k_cmp, const BasicMatrix<T>& k,
                            const BasicMatrix<T>& v, std::size_t t, const NSAConfig& cfg) {
  cfg.validate();
  if (!cfg.aligned()) throw ShapeError("select_blocks: compression and selection grids are not aligned");
  const std::size_t blocks = k_cmp.rows();
  require_shape(blocks * cfg.b_slc <= t && t <= k.rows(), "select_blocks: blocks exceed visible tokens");
  SelectedKV<T> out;
  const BasicMatrix<T> no_values(blocks, 1);
  attend_single<T>(q_t, k_cmp, no_values, 1.0 / std::sqrt(static_cast<double>(q_t.size())), &out.scores);

  std::vector<std::size_t> order(blocks);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.scores[a] > out.scores[b]; });
  order.resize(std::min(cfg.k_slc, blocks));
  std::sort(order.begin(), order.end());
  out.blocks = order;

  const std::size_t rows = order.size() * cfg.b_slc;
  out.k = BasicMatrix<T>(rows, k.cols());
  out.v = BasicMatrix<T>(rows, v.cols());
  std::size_t dst = 0;
  for (std::size_t b : order) {
    for (std::size_t r = b * cfg.b_slc; r < (b + 1) * cfg.b_slc; ++r, ++dst) {
      std::copy(k.row(r).begin(), k.row(r).end(), out.k.row(dst).begin());
      std::copy(v.row(r).begin(), v.row(r).end(), out.v.row(dst).begin());
    }
  }
  return out;
}

struct BranchOutputs {
  std::vector<double> cmp;
  std::vector<double> slc;
  std::vector<double> loc;
};

// Gated sum of the branch outputs. An empty branch contributes nothing.
inline std::vector<double> nsa_combine(const BranchOutputs& b, const BranchGates& g, std::size_t d_h) {
  std::vector<double> out(d_h, 0.0);
  auto add = [&](const std::vector<double>& o, double gate) {
    if (o.empty()) return;
    require_shape(o.size() == d_h, "nsa_combine: branch width");
    for (std::size_t c = 0; c < d_h; ++c) out[c] += gate * o[c];
  };
  add(b.cmp, g.cmp);
  add(b.slc, g.slc);
  add(b.loc, g.loc);
  return out;
}

template <typename T>
BranchGates branch_gates(std::span<const T> q_t, const NSAParams<T>& p) {
  double z[3];
  for (std::size_t c = 0; c < 3; ++c) {
    double s = p.b_branch(0, c);
    for (std::size_t e = 0; e < q_t.size(); ++e) s += static_cast<double>(q_t[e]) * p.w_branch(e, c);
    z[c] = sigmoid(s);
  }
  return {z[0], z[1], z[2]};
}

template <typename T>
struct NSAForward {
  BasicMatrix<T> o;                        // N x d_h
  std::vector<BranchOutputs> branches;     // per token
  std::vector<BranchGates> gates;          // per token
  std::vector<std::vector<std::size_t>> selected;  // per token block indices
  std::vector<std::size_t> attended;       // tokens attended per query, all branches
  std::vector<std::size_t> compressed;     // N_cmp per query
  TileCounters local_counters;
};

struct NSAOptions {
  std::optional<BranchGates> fixed_gates;
  std::size_t block_rows = 64;
  std::size_t block_cols = 64;
};

// Full-sequence forward for one head. The local branch runs the tiled gated
// kernel over the whole sequence with window `cfg.window`; row t of its output
// uses exactly the gate slice U[t-w+1..t].
template <typename T>
NSAForward<T> nsa_forward(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                          std::span<const T> u, const NSAParams<T>& params, const NSAConfig& cfg,
                          const NSAOptions& opts = {}) {
  cfg.validate();
  const std::size_t n = q.rows();
  const std::size_t d_h = q.cols();
  const AttnConfig acfg = AttnConfig::make(n, d_h, cfg.window, std::min(opts.block_rows, std::max<std::size_t>(n, 1)),
                                           std::min(opts.block_cols, std::max<std::size_t>(n, 1)));
  NSAForward<T> res;
  res.o = BasicMatrix<T>(n, d_h);
  if (n == 0) return res;
  const TiledForward<T> local = forward_tiled<T>(q, k, v, u, acfg);
  res.local_counters = local.counters;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_h));

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = i + 1;
    const auto q_t = q.row(i);
    const CompressedKV<T> cmp = compress_kv(k, v, t, cfg, params.cmp_linear);
    BranchOutputs b;
    std::vector<std::size_t> blocks;
    std::size_t slc_rows = 0;
    if (cmp.k.rows() > 0) {
      b.cmp = attend_single<T>(q_t, cmp.k, cmp.v, scale);
      SelectedKV<T> sel = select_blocks(q_t, cmp.k, k, v, t, cfg);
      b.slc = attend_single<T>(q_t, sel.k, sel.v, scale);
      blocks = std::move(sel.blocks);
      slc_rows = sel.k.rows();
    }
    b.loc.assign(local.out.o.row(i).begin(), local.out.o.row(i).end());
    const BranchGates g = opts.fixed_gates ? *opts.fixed_gates : branch_gates(q_t, params);
    const auto o_t = nsa_combine(b, g, d_h);
    for (std::size_t c = 0; c < d_h; ++c) res.o(i, c) = static_cast<T>(o_t[c]);
    res.compressed.push_back(cmp.k.rows());
    res.attended.push_back(cmp.k.rows() + slc_rows + std::min(t, cfg.window));
    res.branches.push_back(std::move(b));
    res.gates.push_back(g);
    res.selected.push_back(std::move(blocks));
  }
  return res;
}

}  // namespace gfwa
