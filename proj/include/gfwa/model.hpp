#pragma once

// GatedFWA attention layer and pre-norm transformer block, plus a toy
// associative-recall model trained end to end through the tiled backward
// kernel and the gate backward.
//
// Layer pipeline, per head h:
//   U_h  = scan(gate(X))
//   O_h  = gated sliding-window attention(Q_h, K_h, V_h, U_h)
//   O~   = concat_h rmsnorm(O_h)
//   G    = swish(X W_go + b_go)
//   out  = (G * O~) W_O
//
// Block:
//   Y = AttnLayer(rmsnorm(X)) + X
//   Z = SwiGLU(rmsnorm(Y)) + Y,  SwiGLU(x) = (swish(x W1) * x W3) W2

#include <cmath>
#include <cstddef>
#include <vector>

#include "gfwa/attn_tiled.hpp"
#include "gfwa/gate.hpp"
#include "gfwa/numerics.hpp"

namespace gfwa {

inline constexpr double kRmsEps = 1e-6;

// Row-wise root-mean-square normalization without a learned scale.
template <typename T>
BasicMatrix<T> rms_norm(const BasicMatrix<T>& x, double eps = kRmsEps) {
  BasicMatrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ms = 0.0;
    for (T v : x.row(i)) ms += static_cast<double>(v) * v;
    ms /= static_cast<double>(std::max<std::size_t>(x.cols(), 1));
    const double inv = 1.0 / std::sqrt(ms + eps);
    for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = static_cast<T>(x(i, c) * inv);
  }
  return out;
}

template <typename T>
struct LayerParams {
  BasicMatrix<T> w_q, w_k, w_v;    // d x d
  GateParams<T> gate;              // d x H
  BasicMatrix<T> w_gate_out;       // d x d
  BasicMatrix<T> b_gate_out;       // 1 x d
  BasicMatrix<T> w_o;              // d x d
  BasicMatrix<T> w1, w3;           // d x d_ff
  BasicMatrix<T> w2;               // d_ff x d

  static LayerParams init(std::size_t d, std::size_t heads, std::size_t d_ff, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    const double s_ff = 1.0 / std::sqrt(static_cast<double>(d_ff));
    LayerParams p;
    p.w_q = random_normal<T>(d, d, rng, s);
    p.w_k = random_normal<T>(d, d, rng, s);
    p.w_v = random_normal<T>(d, d, rng, s);
    p.gate = GateParams<T>::init(d, heads, rng);
    p.w_gate_out = random_normal<T>(d, d, rng, s);
    p.b_gate_out = BasicMatrix<T>(1, d);
    p.w_o = random_normal<T>(d, d, rng, s);
    p.w1 = random_normal<T>(d, d_ff, rng, s);
    p.w3 = random_normal<T>(d, d_ff, rng, s);
    p.w2 = random_normal<T>(d_ff, d, rng, s_ff);
    return p;
  }

  void validate(const AttnConfig& cfg) const {
    const std::size_t d = cfg.heads * cfg.head_dim;
    require_shape(w_q.rows() == d && w_q.cols() == d, "W_Q must be d x d with d = H * d_h");
    require_shape(w_k.rows() == d && w_k.cols() == d && w_v.rows() == d && w_v.cols() == d, "W_K / W_V shape");
    require_shape(gate.input_dim() == d && gate.heads() == cfg.heads, "gate params must be d x H");
    require_shape(w_gate_out.rows() == d && w_gate_out.cols() == d && b_gate_out.cols() == d, "gate-out shape");
    require_shape(w_o.rows() == d && w_o.cols() == d, "W_O shape");
  }
};

struct LayerOptions {
  bool head_norm = true;
  bool output_gate = true;
  std::size_t scan_chunk = 64;
  unsigned threads = 1;
};

template <typename T>
BasicMatrix<T> attn_layer_forward(const BasicMatrix<T>& x, const LayerParams<T>& p, const AttnConfig& cfg,
                                  const LayerOptions& opts = {}) {
  cfg.validate();
  p.validate(cfg);
  require_shape(x.rows() == cfg.seq_len && x.cols() == cfg.heads * cfg.head_dim, "layer input must be N x d");
  const BasicMatrix<T> q = matmul(x, p.w_q);
  const BasicMatrix<T> k = matmul(x, p.w_k);
  const BasicMatrix<T> v = matmul(x, p.w_v);
  const GateState<T> gs = gate_preprocess(x, p.gate, opts.scan_chunk);
  KernelOptions kopts;
  kopts.threads = opts.threads;
  BasicMatrix<T> heads = forward_tiled_heads(q, k, v, gs.u, cfg, kopts).o;
  if (opts.head_norm) {
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      set_head_slice(heads, h, rms_norm(head_slice(heads, h, cfg.head_dim)));
    }
  }
  if (opts.output_gate) {
    BasicMatrix<T> z = matmul(x, p.w_gate_out);
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t c = 0; c < z.cols(); ++c) z(i, c) += p.b_gate_out(0, c);
    heads = hadamard(map(z, swish), heads);
  }
  return matmul(heads, p.w_o);
}

template <typename T>
BasicMatrix<T> swiglu(const BasicMatrix<T>& x, const LayerParams<T>& p) {
  return matmul(hadamard(map(matmul(x, p.w1), swish), matmul(x, p.w3)), p.w2);
}

template <typename T>
BasicMatrix<T> transformer_block_forward(const BasicMatrix<T>& x, const LayerParams<T>& p, const AttnConfig& cfg,
                                         const LayerOptions& opts = {}) {
  const BasicMatrix<T> y = attn_layer_forward(rms_norm(x), p, cfg, opts) + x;
  return swiglu(rms_norm(y), p) + y;
}

// ---------------------------------------------------------------------------
// Toy associative recall

// Pair tokens carry [key ; value]; query tokens carry [key ; 0] for a key seen
// earlier, and the regression target is that key's value.
struct RecallTask {
  MatrixD inputs;   // N x (key_dim + value_dim)
  MatrixD targets;  // N x value_dim, zero outside query rows
  std::vector<std::size_t> query_positions;
  std::size_t key_dim = 0;
  std::size_t value_dim = 0;

  static RecallTask make(std::size_t pairs, std::size_t queries, std::size_t key_dim, std::size_t value_dim,
                         std::size_t vocab, Rng& rng) {
    if (pairs > vocab) throw ShapeError("recall task: more pairs than key symbols");
    if (pairs == 0 && queries > 0) throw ShapeError("recall task: queries need at least one pair");
    const MatrixD key_syms = random_normal<double>(vocab, key_dim, rng, 1.0 / std::sqrt(double(key_dim)));
    const MatrixD val_syms = random_normal<double>(vocab, value_dim, rng, 1.0);
    std::vector<std::size_t> keys(vocab);
    for (std::size_t i = 0; i < vocab; ++i) keys[i] = i;
    for (std::size_t i = vocab; i > 1; --i) std::swap(keys[i - 1], keys[rng.index(i)]);
    keys.resize(pairs);
    std::vector<std::size_t> vals(pairs);
    for (auto& v : vals) v = rng.index(vocab);

    RecallTask task;
    task.key_dim = key_dim;
    task.value_dim = value_dim;
    const std::size_t n = pairs + queries;
    task.inputs = MatrixD(n, key_dim + value_dim);
    task.targets = MatrixD(n, value_dim);
    for (std::size_t p = 0; p < pairs; ++p) {
      for (std::size_t c = 0; c < key_dim; ++c) task.inputs(p, c) = key_syms(keys[p], c);
      for (std::size_t c = 0; c < value_dim; ++c) task.inputs(p, key_dim + c) = val_syms(vals[p], c);
    }
    for (std::size_t qi = 0; qi < queries; ++qi) {
      const std::size_t row = pairs + qi;
      const std::size_t which = rng.index(pairs);
      for (std::size_t c = 0; c < key_dim; ++c) task.inputs(row, c) = key_syms(keys[which], c);
      for (std::size_t c = 0; c < value_dim; ++c) task.targets(row, c) = val_syms(vals[which], c);
      task.query_positions.push_back(row);
    }
    return task;
  }
};

// Input projections, one gated attention (no norms, G == 1), output projection.
struct DemoParams {
  MatrixD w_q, w_k, w_v;  // d_in x d
  GateParams<double> gate;  // d_in x H
  MatrixD w_o;            // d x d_out

  static DemoParams init(std::size_t d_in, std::size_t d, std::size_t heads, std::size_t d_out, Rng& rng) {
    const double s_in = 1.0 / std::sqrt(static_cast<double>(d_in));
    DemoParams p;
    p.w_q = random_normal<double>(d_in, d, rng, s_in);
    p.w_k = random_normal<double>(d_in, d, rng, s_in);
    p.w_v = random_normal<double>(d_in, d, rng, s_in);
    p.gate = GateParams<double>::init(d_in, heads, rng);
    p.w_o = random_normal<double>(d, d_out, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    return p;
  }

  // Every trainable tensor, in a fixed order.
  std::vector<MatrixD*> tensors() { return {&w_q, &w_k, &w_v, &gate.w_gate, &gate.b_gate, &gate.w_beta, &w_o}; }
};

struct DemoConfig {
  std::size_t pairs = 12;
  std::size_t queries = 4;
  std::size_t key_dim = 8;
  std::size_t value_dim = 8;
  std::size_t vocab = 16;
  std::size_t model_dim = 16;
  std::size_t heads = 2;
  std::size_t block = 8;
  std::size_t steps = 500;
  double lr = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    const std::size_t n = pairs + queries;
    if (n > 64 || model_dim > 32 || heads > 2 || heads < 1) {
      throw ShapeError("demo is limited to N <= 64, d <= 32, H <= 2");
    }
    if (model_dim % heads != 0) throw ShapeError("model_dim must be divisible by heads");
  }
};

struct DemoCache {
  MatrixD q, k, v;
  GateState<double> gate;
  MultiHeadForward<double> attn;
  MatrixD y;
  double loss = 0.0;
};

struct DemoGrads {
  MatrixD w_q, w_k, w_v, w_gate, b_gate, w_beta, w_o;

  std::vector<const MatrixD*> tensors() const { return {&w_q, &w_k, &w_v, &w_gate, &b_gate, &w_beta, &w_o}; }
};

inline AttnConfig demo_attn_config(const RecallTask& task, const DemoParams& p, std::size_t block) {
  const std::size_t n = task.inputs.rows();
  const std::size_t heads = p.gate.heads();
  AttnConfig cfg = AttnConfig::make(n, p.w_q.cols() / heads, std::max<std::size_t>(n, 1),
                                    std::min(block, std::max<std::size_t>(n, 1)),
                                    std::min(block, std::max<std::size_t>(n, 1)), heads);
  return cfg;
}

inline DemoCache demo_forward(const RecallTask& task, const DemoParams& p, std::size_t block = 8) {
  const AttnConfig cfg = demo_attn_config(task, p, block);
  DemoCache c;
  c.q = matmul(task.inputs, p.w_q);
  c.k = matmul(task.inputs, p.w_k);
  c.v = matmul(task.inputs, p.w_v);
  c.gate = gate_preprocess(task.inputs, p.gate, std::min<std::size_t>(block, std::max<std::size_t>(cfg.seq_len, 1)));
  c.attn = forward_tiled_heads(c.q, c.k, c.v, c.gate.u, cfg);
  c.y = matmul(c.attn.o, p.w_o);
  double s = 0.0;
  for (std::size_t row : task.query_positions)
    for (std::size_t e = 0; e < c.y.cols(); ++e) {
      const double r = c.y(row, e) - task.targets(row, e);
      s += r * r;
    }
  c.loss = task.query_positions.empty()
               ? 0.0
               : s / static_cast<double>(task.query_positions.size() * c.y.cols());
  return c;
}

inline DemoGrads demo_backward(const RecallTask& task, const DemoParams& p, const DemoCache& c,
                               std::size_t block = 8) {
  const AttnConfig cfg = demo_attn_config(task, p, block);
  MatrixD d_y(c.y.rows(), c.y.cols());
  const double norm = task.query_positions.empty()
                          ? 0.0
                          : 2.0 / static_cast<double>(task.query_positions.size() * c.y.cols());
  for (std::size_t row : task.query_positions)
    for (std::size_t e = 0; e < c.y.cols(); ++e) d_y(row, e) = norm * (c.y(row, e) - task.targets(row, e));

  DemoGrads g;
  g.w_o = matmul_tn(c.attn.o, d_y);
  const MatrixD d_attn = matmul_nt(d_y, p.w_o);
  const auto ab = backward_tiled_heads(c.q, c.k, c.v, c.gate.u, cfg, c.attn.o, c.attn.l, d_attn);
  g.w_q = matmul_tn(task.inputs, ab.d_q);
  g.w_k = matmul_tn(task.inputs, ab.d_k);
  g.w_v = matmul_tn(task.inputs, ab.d_v);
  const GateGrads<double> gg = gate_backward(ab.d_u, c.gate, task.inputs, p.gate);
  g.w_gate = gg.d_w_gate;
  g.b_gate = gg.d_b_gate;
  g.w_beta = gg.d_w_beta;
  return g;
}

struct DemoResult {
  std::vector<double> losses;  // losses[0] is the initial loss, one entry per step after
  bool diverged = false;
};

inline DemoResult train_demo(const RecallTask& task, DemoParams& params, std::size_t steps, double lr,
                             std::size_t block = 8) {
  DemoResult r;
  DemoCache c = demo_forward(task, params, block);
  r.losses.push_back(c.loss);
  for (std::size_t s = 0; s < steps; ++s) {
    const DemoGrads g = demo_backward(task, params, c, block);
    auto ps = params.tensors();
    auto gs = g.tensors();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t e = 0; e < ps[i]->size(); ++e) ps[i]->values()[e] -= lr * gs[i]->values()[e];
    }
    try {
      c = demo_forward(task, params, block);
    } catch (const NumericError&) {
      r.diverged = true;
      break;
    }
    if (!std::isfinite(c.loss)) {
      r.diverged = true;
      break;
    }
    r.losses.push_back(c.loss);
  }
  return r;
}

// Builds the task and model from `cfg` and trains.
inline DemoResult train_demo(const DemoConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const RecallTask task = RecallTask::make(cfg.pairs, cfg.queries, cfg.key_dim, cfg.value_dim, cfg.vocab, rng);
  DemoParams params = DemoParams::init(cfg.key_dim + cfg.value_dim, cfg.model_dim, cfg.heads, cfg.value_dim, rng);
  return train_demo(task, params, cfg.steps, cfg.lr, cfg.block);
}

}  // namespace gfwa
