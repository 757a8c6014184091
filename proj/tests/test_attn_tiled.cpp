#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "gfwa/attn_ref.hpp"
#include "gfwa/attn_tiled.hpp"
#include "gfwa/gate.hpp"
#include "oracles.hpp"

using namespace gfwa;

namespace {

struct Inputs {
  MatrixD q, k, v;
  std::vector<double> u;
};

Inputs random_inputs(std::size_t n, std::size_t d, Rng& rng) {
  return {random_normal<double>(n, d, rng), random_normal<double>(n, d, rng), random_normal<double>(n, d, rng),
          column_of(random_gate_prefix(n, 1, rng), 0)};
}

double probe(const MatrixD& o, const MatrixD& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) s += o.values()[i] * g.values()[i];
  return s;
}

}  // namespace

TEST(TileRange, DocumentedExample) {
  // Rows 16..31 with w = 16 need keys 1..31, which live in key tiles 0 and 1.
  const auto cfg = AttnConfig::make(64, 4, 16, 16, 16);
  const TileRange r = key_tile_range(1, cfg);
  EXPECT_EQ(r.first, 0u);
  EXPECT_EQ(r.last, 1u);
  EXPECT_EQ(r.count(), 2u);
}

TEST(TileRange, FullWindowAndUnitWindow) {
  const auto full = AttnConfig::make(100, 4, 100, 16, 16);
  for (std::size_t rb = 0; rb < 7; ++rb) {
    const auto r = key_tile_range(rb, full);
    EXPECT_EQ(r.first, 0u);
    EXPECT_EQ(r.last, std::min<std::size_t>(rb, 6));
  }
  const auto unit = AttnConfig::make(64, 4, 1, 16, 16);
  for (std::size_t rb = 0; rb < 4; ++rb) {
    EXPECT_EQ(key_tile_range(rb, unit).first, rb);
    EXPECT_EQ(key_tile_range(rb, unit).count(), 1u);
  }
}

TEST(TileRange, MatchesExhaustiveEnumeration) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(256);
    const std::size_t br = 1 + rng.index(40);
    const std::size_t bc = 1 + rng.index(40);
    const std::size_t w = 1 + rng.index(n + 4);
    const auto cfg = AttnConfig::make(n, 4, w, br, bc);
    const auto live = oracle::live_tiles(n, w, br, bc);
    for (std::size_t rb = 0; rb < live.size(); ++rb) {
      const auto r = key_tile_range(rb, cfg);
      ASSERT_FALSE(live[rb].empty());
      EXPECT_EQ(r.first, live[rb].front());
      EXPECT_EQ(r.last, live[rb].back());
      EXPECT_EQ(r.count(), live[rb].size());
    }
  }
}

TEST(ForwardTiled, SingleToken) {
  Rng rng(2);
  const auto in = random_inputs(1, 4, rng);
  const auto out = forward_tiled<double>(in.q, in.k, in.v, in.u, AttnConfig::make(1, 4, 1, 1, 1));
  EXPECT_EQ(out.out.o, in.v);
  double dot = 0.0;
  for (std::size_t c = 0; c < 4; ++c) dot += in.q(0, c) * in.k(0, c);
  EXPECT_NEAR(out.out.l[0], 0.5 * dot, 1e-14);
}

TEST(ForwardTiled, ZeroGateFullWindowIsSoftmax) {
  Rng rng(3);
  const auto in = random_inputs(8, 4, rng);
  const std::vector<double> zero(8, 0.0);
  const auto cfg = AttnConfig::make(8, 4, 8, 3, 2);
  EXPECT_LE(oracle::max_rel(forward_tiled<double>(in.q, in.k, in.v, zero, cfg).out.o,
                            oracle::attention(in.q, in.k, in.v, {}, 8).o),
            1e-6);
}

TEST(ForwardTiled, MatchesOracleOverGrid) {
  Rng rng(4);
  for (std::size_t n : {1, 5, 64, 130}) {
    const auto in = random_inputs(n, 8, rng);
    for (std::size_t w : {std::size_t{1}, std::size_t{3}, std::max<std::size_t>(n / 2, 1), n}) {
      const auto ref = oracle::attention(in.q, in.k, in.v, in.u, w);
      for (std::size_t br : {1, 4, 16, 64})
        for (std::size_t bc : {1, 4, 16, 64}) {
          const auto out = forward_tiled<double>(in.q, in.k, in.v, in.u, AttnConfig::make(n, 8, w, br, bc));
          EXPECT_LE(oracle::max_rel(out.out.o, ref.o), 1e-10) << n << ' ' << w << ' ' << br << ' ' << bc;
          EXPECT_LE(oracle::max_rel(out.out.l, ref.l), 1e-10);
        }
    }
  }
}

TEST(ForwardTiled, FloatStorageWithinTolerance) {
  Rng rng(5);
  const auto in = random_inputs(200, 16, rng);
  const Matrix q = in.q.cast<float>(), k = in.k.cast<float>(), v = in.v.cast<float>();
  std::vector<float> u(in.u.begin(), in.u.end());
  const auto out = forward_tiled<float>(q, k, v, u, AttnConfig::make(200, 16, 37, 16, 32));
  const std::vector<double> ud(u.begin(), u.end());
  const auto ref = oracle::attention(q.cast<double>(), k.cast<double>(), v.cast<double>(), ud, 37);
  EXPECT_LE(oracle::max_rel(out.out.o.cast<double>(), ref.o), 1e-5);
}

TEST(ForwardTiled, TileSizeInvariance) {
  Rng rng(6);
  const auto in = random_inputs(97, 8, rng);
  const auto base = forward_tiled<double>(in.q, in.k, in.v, in.u, AttnConfig::make(97, 8, 20, 97, 97)).out.o;
  for (auto [br, bc] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 1}, {7, 13}, {32, 5}, {64, 64}}) {
    EXPECT_LE(max_rel_error(forward_tiled<double>(in.q, in.k, in.v, in.u, AttnConfig::make(97, 8, 20, br, bc)).out.o,
                            base),
              1e-6);
  }
}

TEST(ForwardTiled, MultiHeadAndThreadsAreDeterministic) {
  Rng rng(7);
  const std::size_t n = 70, h = 4, d = 4;
  const MatrixD q = random_normal<double>(n, h * d, rng);
  const MatrixD k = random_normal<double>(n, h * d, rng);
  const MatrixD v = random_normal<double>(n, h * d, rng);
  const MatrixD u = random_gate_prefix(n, h, rng);
  const auto cfg = AttnConfig::make(n, d, 9, 8, 8, h);
  KernelOptions four;
  four.threads = 4;
  const auto a = forward_tiled_heads(q, k, v, u, cfg);
  const auto b = forward_tiled_heads(q, k, v, u, cfg, four);
  EXPECT_EQ(a.o, b.o);
  EXPECT_EQ(a.l, b.l);
  for (std::size_t head = 0; head < h; ++head) {
    const auto ref = oracle::attention(head_slice(q, head, d), head_slice(k, head, d), head_slice(v, head, d),
                                       column_of(u, head), 9);
    EXPECT_LE(oracle::max_rel(head_slice(a.o, head, d), ref.o), 1e-10);
  }
}

TEST(ForwardTiled, StreamingStateInvariant) {
  Rng rng(8);
  const std::size_t n = 40;
  const auto in = random_inputs(n, 4, rng);
  const auto cfg = AttnConfig::make(n, 4, 13, 8, 4);
  std::map<std::size_t, double> last_m;
  std::size_t snapshots = 0;
  KernelOptions opts;
  opts.observer = [&](const StreamSnapshot& s) {
    ++snapshots;
    // Partial sum of exp(logit) over keys in tiles 0..key_tile inside the window.
    long double z = 0.0L;
    for (std::size_t j = cfg.window_begin(s.row); j <= s.row && j < (s.key_tile + 1) * cfg.block_cols; ++j) {
      long double dot = 0.0L;
      for (std::size_t c = 0; c < 4; ++c) dot += static_cast<long double>(in.q(s.row, c)) * in.k(j, c);
      z += std::exp(0.5L * dot + in.u[s.row] - in.u[j]);
    }
    if (z > 0) {
      EXPECT_NEAR(std::exp(s.m) * s.ell / static_cast<double>(z), 1.0, 1e-12);
      EXPECT_GT(s.ell, 0.0);
    }
    if (last_m.count(s.row)) {
      EXPECT_GE(s.m, last_m[s.row]);
    }
    last_m[s.row] = s.m;
  };
  forward_tiled<double>(in.q, in.k, in.v, in.u, cfg, opts);
  EXPECT_GT(snapshots, n);
}

TEST(ForwardTiled, LongSequenceSmoke) {
  Rng rng(9);
  const std::size_t n = 4096;
  const Matrix q = random_normal<float>(n, 16, rng), k = random_normal<float>(n, 16, rng),
               v = random_normal<float>(n, 16, rng);
  const MatrixD ud = random_gate_prefix(n, 1, rng);
  const auto u = column_of(ud.cast<float>(), 0);
  const auto cfg = AttnConfig::make(n, 16, 512, 64, 64);
  const auto out = forward_tiled<float>(q, k, v, u, cfg);
  EXPECT_TRUE(all_finite(out.out.o));
  for (std::size_t i : {std::size_t{0}, std::size_t{511}, std::size_t{2048}, n - 1}) {
    double s = 0.0;
    for (std::size_t j = cfg.window_begin(i); j <= i; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 16; ++c) dot += double(q(i, c)) * k(j, c);
      s += std::exp(cfg.scale * dot + double(u[i]) - double(u[j]) - double(out.out.l[i]));
    }
    EXPECT_NEAR(s, 1.0, 1e-4);
  }
}

TEST(ForwardTiled, CountersMatchEnumerationAndBounds) {
  for (std::size_t n : {1, 33, 128, 300}) {
    for (std::size_t w : {1, 8, 50, 400}) {
      const std::size_t br = 16, bc = 8;
      const auto cfg = AttnConfig::make(n, 4, w, br, bc);
      const MatrixD z(n, 4, 0.1);
      const auto out = forward_tiled<double>(z, z, z, {}, cfg);
      const auto live = oracle::live_tiles(n, w, br, bc);
      ASSERT_EQ(out.counters.tiles_visited.size(), live.size());
      for (std::size_t rb = 0; rb < live.size(); ++rb) EXPECT_EQ(out.counters.tiles_visited[rb], live[rb].size());
      EXPECT_EQ(out.counters.logit_evaluations, oracle::window_pairs(n, w));
      EXPECT_LE(out.counters.logit_evaluations, n * (w + bc));
      EXPECT_EQ(out.counters.elements_written.at("O"), n * 4);
      EXPECT_EQ(out.counters.elements_written.at("L"), n);
      EXPECT_EQ(out.counters.elements_read.at("Q"), n * 4);
    }
  }
  const MatrixD z(256, 4, 0.1);
  EXPECT_EQ(forward_tiled<double>(z, z, z, {}, AttnConfig::make(256, 4, 256, 16, 16)).counters.logit_evaluations,
            256u * 257u / 2u);
}

TEST(ForwardTiled, CountersAreDeterministic) {
  Rng rng(10);
  const auto in = random_inputs(90, 4, rng);
  const auto cfg = AttnConfig::make(90, 4, 17, 8, 16);
  const auto a = forward_tiled<double>(in.q, in.k, in.v, in.u, cfg).counters;
  const auto b = forward_tiled<double>(in.q, in.k, in.v, in.u, cfg).counters;
  EXPECT_EQ(a.tiles_visited, b.tiles_visited);
  EXPECT_EQ(a.elements_read, b.elements_read);
  EXPECT_EQ(a.elements_written, b.elements_written);
}

TEST(ForwardTiled, NonFiniteLogitRejected) {
  Rng rng(11);
  auto in = random_inputs(10, 4, rng);
  in.q(3, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(forward_tiled<double>(in.q, in.k, in.v, in.u, AttnConfig::make(10, 4, 4, 4, 4)), NumericError);
}

TEST(BackwardTiled, ZeroUpstreamAndSingleToken) {
  Rng rng(12);
  const auto in = random_inputs(9, 3, rng);
  const auto cfg = AttnConfig::make(9, 3, 4, 4, 2);
  const auto f = forward_tiled<double>(in.q, in.k, in.v, in.u, cfg);
  const auto g = backward_tiled<double>(in.q, in.k, in.v, in.u, cfg, f.out.o, f.out.l, MatrixD(9, 3)).grads;
  EXPECT_EQ(max_abs(g.d_q) + max_abs(g.d_k) + max_abs(g.d_v), 0.0);

  const auto one = random_inputs(1, 3, rng);
  const auto cfg1 = AttnConfig::make(1, 3, 1, 1, 1);
  const auto f1 = forward_tiled<double>(one.q, one.k, one.v, one.u, cfg1);
  const MatrixD d_o = random_normal<double>(1, 3, rng);
  const auto g1 = backward_tiled<double>(one.q, one.k, one.v, one.u, cfg1, f1.out.o, f1.out.l, d_o).grads;
  EXPECT_LE(max_abs_diff(g1.d_v, d_o), 1e-15);
  EXPECT_LE(max_abs(g1.d_q) + max_abs(g1.d_k), 1e-15);
  EXPECT_LE(std::abs(g1.d_u[0]), 1e-15);
}

TEST(BackwardTiled, DualOracle) {
  Rng rng(13);
  auto in = random_inputs(32, 4, rng);
  const auto cfg = AttnConfig::make(32, 4, 8, 8, 8);
  const MatrixD g = random_normal<double>(32, 4, rng);
  const auto f = forward_tiled<double>(in.q, in.k, in.v, in.u, cfg);
  const auto t = backward_tiled<double>(in.q, in.k, in.v, in.u, cfg, f.out.o, f.out.l, g).grads;
  const auto r = ref_backward<double>(in.q, in.k, in.v, in.u, cfg, g);
  EXPECT_LE(max_rel_error(t.d_q, r.d_q), 1e-5);
  EXPECT_LE(max_rel_error(t.d_k, r.d_k), 1e-5);
  EXPECT_LE(max_rel_error(t.d_v, r.d_v), 1e-5);
  EXPECT_LE(oracle::max_rel(t.d_u, r.d_u), 1e-5);
  auto loss = [&] { return probe(oracle::attention(in.q, in.k, in.v, in.u, 8).o, g); };
  EXPECT_LE(oracle::max_rel(t.d_q.values(), oracle::gradient(in.q.values(), loss)), 1e-4);
  EXPECT_LE(oracle::max_rel(t.d_k.values(), oracle::gradient(in.k.values(), loss)), 1e-4);
  EXPECT_LE(oracle::max_rel(t.d_v.values(), oracle::gradient(in.v.values(), loss)), 1e-4);
  EXPECT_LE(oracle::max_rel(t.d_u, oracle::gradient(in.u, loss)), 1e-4);
}

TEST(BackwardTiled, MatchesReferenceOverGrid) {
  Rng rng(14);
  for (std::size_t n : {3, 17, 64}) {
    const auto in = random_inputs(n, 4, rng);
    const MatrixD g = random_normal<double>(n, 4, rng);
    for (std::size_t w : {std::size_t{1}, std::size_t{3}, n / 2 + 1, n})
      for (std::size_t b : {1, 4, 16}) {
        const auto cfg = AttnConfig::make(n, 4, w, b, 16 / b);
        const auto f = forward_tiled<double>(in.q, in.k, in.v, in.u, cfg);
        const auto t = backward_tiled<double>(in.q, in.k, in.v, in.u, cfg, f.out.o, f.out.l, g).grads;
        const auto r = ref_backward<double>(in.q, in.k, in.v, in.u, cfg, g);
        EXPECT_LE(max_rel_error(t.d_q, r.d_q), 1e-5);
        EXPECT_LE(max_rel_error(t.d_k, r.d_k), 1e-5);
        EXPECT_LE(max_rel_error(t.d_v, r.d_v), 1e-5);
        EXPECT_LE(oracle::max_rel(t.d_u, r.d_u), 1e-5);
      }
  }
}

TEST(BackwardTiled, StaleLogNormalizerRejected) {
  Rng rng(15);
  const auto in = random_inputs(20, 4, rng);
  const auto cfg = AttnConfig::make(20, 4, 5, 4, 4);
  const auto f = forward_tiled<double>(in.q, in.k, in.v, in.u, cfg);
  std::vector<double> stale = f.out.l;
  stale[7] += 0.01;
  const MatrixD g = random_normal<double>(20, 4, rng);
  EXPECT_THROW(backward_tiled<double>(in.q, in.k, in.v, in.u, cfg, f.out.o, stale, g), NumericError);
}

TEST(BackwardTiled, ScratchIsTileSizedNotSequenceSized) {
  Rng rng(16);
  std::vector<std::size_t> scratch;
  for (std::size_t n : {64, 256, 1024}) {
    const auto in = random_inputs(n, 8, rng);
    const auto cfg = AttnConfig::make(n, 8, 32, 16, 16);
    const auto f = forward_tiled<double>(in.q, in.k, in.v, in.u, cfg);
    const auto b = backward_tiled<double>(in.q, in.k, in.v, in.u, cfg, f.out.o, f.out.l, in.v);
    EXPECT_LE(b.counters.scratch_elements, 4 * (16 * 16 + (16 + 16) * (8 + 1)));
    EXPECT_LE(f.counters.scratch_elements, 4 * (16 * 16 + (16 + 16) * (8 + 1)));
    scratch.push_back(b.counters.scratch_elements);
  }
  EXPECT_EQ(scratch.front(), scratch.back());
}

TEST(BackwardTiled, MultiHeadMatchesPerHead) {
  Rng rng(17);
  const std::size_t n = 30, h = 2, d = 4;
  const MatrixD q = random_normal<double>(n, h * d, rng), k = random_normal<double>(n, h * d, rng),
                v = random_normal<double>(n, h * d, rng), g = random_normal<double>(n, h * d, rng);
  const MatrixD u = random_gate_prefix(n, h, rng);
  const auto cfg = AttnConfig::make(n, d, 6, 4, 8, h);
  const auto f = forward_tiled_heads(q, k, v, u, cfg);
  const auto b = backward_tiled_heads(q, k, v, u, cfg, f.o, f.l, g, 2);
  for (std::size_t head = 0; head < h; ++head) {
    const auto r = ref_backward<double>(head_slice(q, head, d), head_slice(k, head, d), head_slice(v, head, d),
                                        column_of(u, head), cfg, head_slice(g, head, d));
    EXPECT_LE(max_rel_error(head_slice(b.d_q, head, d), r.d_q), 1e-10);
    EXPECT_LE(max_rel_error(head_slice(b.d_k, head, d), r.d_k), 1e-10);
    EXPECT_LE(oracle::max_rel(column_of(b.d_u, head), r.d_u), 1e-10);
  }
}
