#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gfwa/gate.hpp"
#include "oracles.hpp"

using namespace gfwa;

namespace {

struct ScanInput {
  MatrixD h, beta, alpha;
};

ScanInput random_scan_input(std::size_t n, std::size_t heads, Rng& rng) {
  ScanInput in{random_normal<double>(n, heads, rng, 2.0),
               map(random_normal<double>(n, heads, rng), [](double a) { return 1.0 + elu(a); }), MatrixD(n, heads)};
  for (std::size_t i = 0; i < in.alpha.size(); ++i)
    in.alpha.values()[i] = gate_alpha(in.h.values()[i], in.beta.values()[i], kGateEps);
  return in;
}

double scan_rel(const MatrixD& a, const MatrixD& b) { return max_rel_error(a, b); }

}  // namespace

TEST(GateForward, ZeroPreActivationGivesLn2) {
  const GateParams<double> p = GateParams<double>::zeros(3, 2);
  const MatrixD x(5, 3, 0.7);
  const auto s = gate_forward(x, p);
  for (double b : s.beta.values()) EXPECT_EQ(b, 1.0);
  for (double a : s.alpha.values()) EXPECT_NEAR(a, std::numbers::ln2 / (1.0 + 1e-6), 1e-15);
  EXPECT_NEAR(s.alpha(0, 0), 0.693146, 1e-6);
}

TEST(GateForward, InitialisationStartsWithUnitBeta) {
  Rng rng(1);
  const auto p = GateParams<double>::init(6, 3, rng);
  for (double w : p.w_beta.values()) EXPECT_EQ(w, 0.0);
  const auto s = gate_forward(random_normal<double>(10, 6, rng), p);
  for (double b : s.beta.values()) EXPECT_EQ(b, 1.0);
}

TEST(GateForward, MatchesHighPrecisionOracle) {
  Rng rng(2);
  GateParams<double> p = GateParams<double>::init(4, 2, rng);
  p.b_gate = random_normal<double>(1, 2, rng);
  p.w_beta = random_normal<double>(4, 2, rng);
  const MatrixD x = random_normal<double>(16, 4, rng);
  const auto s = gate_forward(x, p);
  const MatrixD h = oracle::matmul(x, p.w_gate);
  const MatrixD bp = oracle::matmul(x, p.w_beta);
  for (std::size_t t = 0; t < 16; ++t)
    for (std::size_t c = 0; c < 2; ++c) {
      const long double hh = h(t, c) + p.b_gate(0, c);
      const long double b = bp(t, c) >= 0 ? 1.0L + bp(t, c) : std::exp(static_cast<long double>(bp(t, c)));
      const long double a = oracle::alpha(hh, b);
      EXPECT_NEAR(s.alpha(t, c) / static_cast<double>(a), 1.0, 1e-6);
      EXPECT_GT(s.alpha(t, c), 0.0);
      EXPECT_GT(s.beta(t, c), 0.0);
    }
}

TEST(GateForward, NonFiniteInputRejected) {
  MatrixD x(2, 2, 0.0);
  x(1, 1) = std::nan("");
  EXPECT_THROW(gate_forward(x, GateParams<double>::zeros(2, 1)), NumericError);
  EXPECT_THROW(gate_forward(MatrixD(2, 3), GateParams<double>::zeros(2, 1)), ShapeError);
}

TEST(ScanNaive, HandValues) {
  const double l = std::numbers::ln2;
  const MatrixD alpha = MatrixD::from_rows({{l}, {l}, {l}});
  const MatrixD u = scan_naive(alpha);
  EXPECT_DOUBLE_EQ(u(0, 0), -l);
  EXPECT_DOUBLE_EQ(u(1, 0), -2 * l);
  EXPECT_DOUBLE_EQ(u(2, 0), -3 * l);
  EXPECT_EQ(scan_naive(MatrixD(4, 2)), MatrixD(4, 2));
}

TEST(ScanNaive, LastEntryIsNegatedColumnSum) {
  Rng rng(3);
  const auto in = random_scan_input(500, 3, rng);
  const MatrixD u = scan_naive(in.alpha);
  for (std::size_t c = 0; c < 3; ++c) {
    long double s = 0;
    for (std::size_t t = 0; t < 500; ++t) s += in.alpha(t, c);
    EXPECT_NEAR(u(499, c) / -static_cast<double>(s), 1.0, 1e-12);
  }
}

TEST(ScanOnePass, ZeroGateHandValues) {
  const MatrixD h(4, 1, 0.0);
  const MatrixD beta(4, 1, 1.0);
  const MatrixD u = scan_onepass(h, beta, 2);
  for (std::size_t t = 0; t < 4; ++t)
    EXPECT_NEAR(u(t, 0), -(t + 1.0) * std::numbers::ln2 / (1.0 + 1e-6), 1e-14);
}

TEST(ScanOnePass, SingleChunkEqualsNaiveExactly) {
  Rng rng(4);
  const auto in = random_scan_input(37, 2, rng);
  EXPECT_EQ(scan_onepass(in.h, in.beta, 37), scan_naive(in.alpha));
}

TEST(ScanStrategies, AgreeAcrossLengthsAndChunks) {
  Rng rng(5);
  for (std::size_t n : {1, 2, 16, 20, 64, 333, 4096}) {
    const auto in = random_scan_input(n, 2, rng);
    const MatrixD naive = scan_naive(in.alpha);
    const MatrixD exact = oracle::prefix(in.h, in.beta);
    for (std::size_t chunk : {std::size_t{1}, std::size_t{2}, std::size_t{7}, std::size_t{8}, std::size_t{64}, n}) {
      if (chunk > n) continue;
      SCOPED_TRACE("N=" + std::to_string(n) + " B_t=" + std::to_string(chunk));
      const MatrixD one = scan_onepass(in.h, in.beta, chunk);
      const MatrixD three = scan_three_phase(in.h, in.beta, chunk);
      EXPECT_LE(scan_rel(one, naive), 1e-12);
      EXPECT_LE(scan_rel(three, naive), 1e-12);
      EXPECT_LE(scan_rel(three, one), 1e-12);
      EXPECT_LE(scan_rel(one, exact), 1e-12);
    }
  }
}

TEST(ScanThreePhase, UnevenLastChunkAndThreads) {
  Rng rng(6);
  const auto in = random_scan_input(20, 3, rng);
  const MatrixD naive = scan_naive(in.alpha);
  EXPECT_LE(scan_rel(scan_three_phase(in.h, in.beta, 8), naive), 1e-12);
  EXPECT_EQ(scan_three_phase(in.h, in.beta, 8, kGateEps, nullptr, 4), scan_three_phase(in.h, in.beta, 8));
}

TEST(ScanCounters, OnePassReadsOnceWritesOnce) {
  Rng rng(7);
  for (std::size_t n : {1, 9, 64, 100}) {
    const auto in = random_scan_input(n, 3, rng);
    ScanCounters c;
    scan_onepass(in.h, in.beta, std::min<std::size_t>(8, n), kGateEps, &c);
    EXPECT_EQ(c.reads_h, n * 3);
    EXPECT_EQ(c.reads_beta, n * 3);
    EXPECT_EQ(c.input_reads(), 2 * n * 3);
    EXPECT_EQ(c.writes_u, n * 3);
    EXPECT_EQ(c.workspace_reads + c.workspace_writes, 0u);

    ScanCounters t;
    scan_three_phase(in.h, in.beta, std::min<std::size_t>(8, n), kGateEps, &t);
    EXPECT_EQ(t.input_reads(), 4 * n * 3);
    EXPECT_EQ(t.writes_u, n * 3);
  }
}

TEST(ScanChunk, OutOfRangeRejected) {
  const MatrixD h(4, 1), beta(4, 1, 1.0);
  EXPECT_THROW(scan_onepass(h, beta, 0), ShapeError);
  EXPECT_THROW(scan_onepass(h, beta, 5), ShapeError);
  EXPECT_THROW(scan_three_phase(h, beta, 0), ShapeError);
}

TEST(GatePrefix, StrictlyDecreasing) {
  Rng rng(8);
  const MatrixD u = random_gate_prefix(300, 4, rng);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t t = 1; t < 300; ++t) EXPECT_LT(u(t, c), u(t - 1, c));
}

TEST(GateBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(9);
  const auto p = GateParams<double>::init(3, 2, rng);
  const MatrixD x = random_normal<double>(6, 3, rng);
  const auto s = gate_preprocess(x, p, 2);
  const auto g = gate_backward(MatrixD(6, 2), s, x, p);
  EXPECT_EQ(max_abs(g.d_w_gate) + max_abs(g.d_b_gate) + max_abs(g.d_w_beta) + max_abs(g.d_x), 0.0);
}

TEST(GateBackward, SingleTokenSuffixSum) {
  const auto p = GateParams<double>::zeros(1, 1);
  const MatrixD x(1, 1, 0.0);
  const auto s = gate_preprocess(x, p, 1);
  const auto g = gate_backward(MatrixD(1, 1, 2.5), s, x, p);
  // d alpha = -dU, and d alpha / d h = sigmoid(0) * 1 / (1 + eps).
  EXPECT_NEAR(g.d_h_pre(0, 0), -2.5 * 0.5 / (1.0 + kGateEps), 1e-15);
}

TEST(GateBackward, ConstantUpstreamSuffixSum) {
  // With h = 0 and beta = 1 the chain factor is constant, so d h[q] is
  // proportional to -c (N - q).
  const std::size_t n = 7;
  const auto p = GateParams<double>::zeros(1, 1);
  const MatrixD x(n, 1, 0.0);
  const auto s = gate_preprocess(x, p, 3);
  const double c = 0.3;
  const auto g = gate_backward(MatrixD(n, 1, c), s, x, p);
  const double factor = 0.5 / (1.0 + kGateEps);
  for (std::size_t q = 0; q < n; ++q) EXPECT_NEAR(g.d_h_pre(q, 0), -c * (n - q) * factor, 1e-14);
}

TEST(GateBackward, MatchesFiniteDifferences) {
  Rng rng(10);
  GateParams<double> p = GateParams<double>::init(4, 2, rng);
  p.b_gate = random_normal<double>(1, 2, rng);
  p.w_beta = random_normal<double>(4, 2, rng, 0.7);
  MatrixD x = random_normal<double>(9, 4, rng);
  const MatrixD weights = random_normal<double>(9, 2, rng);
  auto loss = [&] {
    MatrixD h = oracle::matmul(x, p.w_gate);
    for (std::size_t t = 0; t < h.rows(); ++t)
      for (std::size_t c = 0; c < h.cols(); ++c) h(t, c) += p.b_gate(0, c);
    MatrixD beta = oracle::matmul(x, p.w_beta);
    for (auto& b : beta.values()) b = b >= 0 ? 1.0 + b : std::exp(b);
    const MatrixD u = oracle::prefix(h, beta);
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += u.values()[i] * weights.values()[i];
    return acc;
  };
  const auto s = gate_preprocess(x, p, 4);
  const auto g = gate_backward(weights, s, x, p);
  EXPECT_LE(oracle::max_rel(g.d_w_gate.values(), oracle::gradient(p.w_gate.values(), loss)), 1e-5);
  EXPECT_LE(oracle::max_rel(g.d_b_gate.values(), oracle::gradient(p.b_gate.values(), loss)), 1e-5);
  EXPECT_LE(oracle::max_rel(g.d_w_beta.values(), oracle::gradient(p.w_beta.values(), loss)), 1e-5);
  EXPECT_LE(oracle::max_rel(g.d_x.values(), oracle::gradient(x.values(), loss)), 1e-5);
}
