#pragma once

// Independent oracles for the unit tests. These are written straight from the
// defining formulas in long double and deliberately share no code with the
// library beyond the matrix container.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gfwa/numerics.hpp"

namespace oracle {

using gfwa::MatrixD;

inline MatrixD matmul(const MatrixD& a, const MatrixD& b) {
  MatrixD out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(s);
    }
  return out;
}

// alpha = log(1 + exp(beta h)) / (beta + eps), evaluated in long double.
inline long double alpha(long double h, long double beta, long double eps = 1e-6L) {
  return std::log1p(std::exp(beta * h)) / (beta + eps);
}

// U[t] = -sum_{q <= t} alpha_q per column.
inline MatrixD prefix(const MatrixD& h, const MatrixD& beta, long double eps = 1e-6L) {
  MatrixD u(h.rows(), h.cols());
  for (std::size_t c = 0; c < h.cols(); ++c) {
    long double acc = 0.0L;
    for (std::size_t t = 0; t < h.rows(); ++t) {
      acc -= alpha(h(t, c), beta(t, c), eps);
      u(t, c) = static_cast<double>(acc);
    }
  }
  return u;
}

struct Attention {
  MatrixD o;
  std::vector<double> l;
};

// Row-by-row causal windowed softmax with optional additive bias u_i - u_j.
inline Attention attention(const MatrixD& q, const MatrixD& k, const MatrixD& v, const std::vector<double>& u,
                           std::size_t w) {
  const std::size_t n = q.rows();
  const long double scale = 1.0L / std::sqrt(static_cast<long double>(q.cols()));
  Attention out{MatrixD(n, v.cols()), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<long double> s;
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j <= i; ++j) {
      if (i - j >= w) continue;
      long double dot = 0.0L;
      for (std::size_t c = 0; c < q.cols(); ++c) dot += static_cast<long double>(q(i, c)) * k(j, c);
      long double x = scale * dot;
      if (!u.empty()) x += static_cast<long double>(u[i]) - u[j];
      s.push_back(x);
      idx.push_back(j);
    }
    const long double m = *std::max_element(s.begin(), s.end());
    long double z = 0.0L;
    for (auto x : s) z += std::exp(x - m);
    for (std::size_t c = 0; c < v.cols(); ++c) {
      long double acc = 0.0L;
      for (std::size_t e = 0; e < s.size(); ++e) acc += std::exp(s[e] - m) / z * v(idx[e], c);
      out.o(i, c) = static_cast<double>(acc);
    }
    out.l[i] = static_cast<double>(m + std::log(z));
  }
  return out;
}

// Central differences of f with respect to every entry of x.
inline std::vector<double> gradient(std::span<double> x, const std::function<double()>& f, double eps = 1e-5) {
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

// Every (row block, key block) pair holding at least one in-window pair.
inline std::vector<std::vector<std::size_t>> live_tiles(std::size_t n, std::size_t w, std::size_t br,
                                                        std::size_t bc) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t rb = 0; rb * br < n; ++rb) {
    std::vector<std::size_t> row;
    for (std::size_t cb = 0; cb * bc < n; ++cb) {
      bool live = false;
      for (std::size_t i = rb * br; i < std::min(n, (rb + 1) * br); ++i)
        for (std::size_t j = cb * bc; j < std::min(n, (cb + 1) * bc); ++j) live = live || (j <= i && i - j < w);
      if (live) row.push_back(cb);
    }
    out.push_back(row);
  }
  return out;
}

inline std::size_t window_pairs(std::size_t n, std::size_t w) {
  std::size_t s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) s += (i - j < w);
  return s;
}

// Partial sum of the exponential series.
inline long double taylor_exp(long double x, std::size_t degree) {
  long double term = 1.0L;
  long double s = 1.0L;
  for (std::size_t n = 1; n <= degree; ++n) {
    term *= x / static_cast<long double>(n);
    s += term;
  }
  return s;
}

// Indices of the k largest scores, lower index first on ties, sorted ascending.
inline std::vector<std::size_t> topk(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> chosen;
  for (std::size_t r = 0; r < std::min(k, scores.size()); ++r) {
    std::size_t best = scores.size();
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (std::find(chosen.begin(), chosen.end(), j) != chosen.end()) continue;
      if (best == scores.size() || scores[j] > scores[best]) best = j;
    }
    chosen.push_back(best);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

inline double max_rel(std::span<const double> a, std::span<const double> b) {
  double scale = 0.0;
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return scale > 0.0 ? diff / scale : diff;
}

inline double max_rel(const MatrixD& a, const MatrixD& b) { return max_rel(a.values(), b.values()); }

}  // namespace oracle
