#pragma once

// Executable associative-memory identities.
//
// A truncated Taylor feature map phi_P linearizes exp(q k^T / sqrt(d)) up to
// degree P. Memories are built directly from their definitions
// (time index t is 1-based, token t lives in row t-1):
//
//   softmax   M_t = (1/t) sum_{j<=t} phi(k_j)^T v_j
//   swa       M_t = (1/w) sum_{i=t-w+1..t} phi(k_i)^T v_i
//   gatedfwa  M_t = (1/w) sum_{i=t-w+1..t} exp(B_{t,i}) phi(k_i)^T v_i,
//             B_{t,i} = -sum_{j=i+1..t} alpha_j
//
// and the one-step recurrences and gradient-step objectives are checked
// against those constructions. The normalization constant of the kernel
// average is not modeled; all memories are unnormalized.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gfwa/numerics.hpp"

namespace gfwa {

class FeatureMap {
 public:
  static constexpr std::size_t kMaxDegree = 6;
  static constexpr std::size_t kMaxDim = 4;

  FeatureMap(std::size_t dim, std::size_t degree) : dim_(dim), degree_(degree) {
    if (dim < 1 || dim > kMaxDim) throw ShapeError("feature map input dim must be in [1, 4]");
    if (degree > kMaxDegree) throw ShapeError("feature map degree must be <= 6");
    std::size_t power = 1;
    feature_dim_ = 0;
    for (std::size_t n = 0; n <= degree; ++n) {
      feature_dim_ += power;
      power *= dim;
    }
  }

  [[nodiscard]] std::size_t dim() const { return dim_; }
  [[nodiscard]] std::size_t degree() const { return degree_; }
  [[nodiscard]] std::size_t feature_dim() const { return feature_dim_; }
  [[nodiscard]] double scale() const { return 1.0 / std::sqrt(static_cast<double>(dim_)); }

  // [1, x / sqrt(1! sqrt(d)), x(x)x / sqrt(2! d), ...]; each tensor power is
  // flattened in lexicographic index order (last index fastest).
  [[nodiscard]] std::vector<double> operator()(std::span<const double> x) const {
    require_shape(x.size() == dim_, "phi: input dimension mismatch");
    std::vector<double> out;
    out.reserve(feature_dim_);
    std::vector<double> power = {1.0};
    double factorial = 1.0;
    const double sqrt_d = std::sqrt(static_cast<double>(dim_));
    for (std::size_t n = 0; n <= degree_; ++n) {
      if (n > 0) {
        std::vector<double> next;
        next.reserve(power.size() * dim_);
        for (double p : power)
          for (double xi : x) next.push_back(p * xi);
        power = std::move(next);
        factorial *= static_cast<double>(n);
      }
      const double coef = 1.0 / std::sqrt(factorial * std::pow(sqrt_d, static_cast<double>(n)));
      for (double p : power) out.push_back(coef * p);
    }
    return out;
  }

  [[nodiscard]] double kernel(std::span<const double> q, std::span<const double> k) const {
    const auto a = (*this)(q);
    const auto b = (*this)(k);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  // Lagrange bound on |<phi(q), phi(k)> - exp(x)| with x = q k^T / sqrt(d).
  [[nodiscard]] double remainder_bound(double x) const {
    double fact = 1.0;
    for (std::size_t n = 2; n <= degree_ + 1; ++n) fact *= static_cast<double>(n);
    return std::pow(std::abs(x), static_cast<double>(degree_ + 1)) * std::exp(std::abs(x)) / fact;
  }

 private:
  std::size_t dim_;
  std::size_t degree_;
  std::size_t feature_dim_ = 0;
};

inline std::vector<double> phi(std::span<const double> x, const FeatureMap& fm) { return fm(x); }

enum class MemoryKind { softmax, swa, gatedfwa };

inline const char* to_string(MemoryKind k) {
  switch (k) {
    case MemoryKind::softmax: return "softmax";
    case MemoryKind::swa: return "swa";
    case MemoryKind::gatedfwa: return "gatedfwa";
  }
  return "?";
}

struct MemoryState {
  MatrixD m;  // dim_phi x d_v
  std::size_t t = 0;
  MemoryKind kind = MemoryKind::softmax;
};

// A token stream for the simulator: row i of keys/values is token i+1.
struct MemorySequence {
  MatrixD keys;                // T x d
  MatrixD values;              // T x d_v
  std::vector<double> alphas;  // T, only used by gatedfwa

  [[nodiscard]] std::size_t length() const { return keys.rows(); }

  static MemorySequence random(std::size_t len, std::size_t d, std::size_t d_v, Rng& rng) {
    MemorySequence s{random_normal<double>(len, d, rng), random_normal<double>(len, d_v, rng),
                     std::vector<double>(len)};
    for (auto& a : s.alphas) a = rng.uniform(0.05, 1.5);
    return s;
  }
};

namespace detail {

// out += coef * phi(k)^T v
inline void add_outer(MatrixD& out, std::span<const double> phi_k, std::span<const double> v, double coef) {
  for (std::size_t a = 0; a < phi_k.size(); ++a)
    for (std::size_t b = 0; b < v.size(); ++b) out(a, b) += coef * phi_k[a] * v[b];
}

inline MatrixD outer(const FeatureMap& fm, const MemorySequence& s, std::size_t t) {
  MatrixD out(fm.feature_dim(), s.values.cols());
  add_outer(out, fm(s.keys.row(t - 1)), s.values.row(t - 1), 1.0);
  return out;
}

inline double frob_inner(const MatrixD& a, const MatrixD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

inline void require_time(const MemorySequence& s, std::size_t t) {
  if (t < 1 || t > s.length()) throw ShapeError("time index out of range");
}

}  // namespace detail

// exp(B_{t,i}) = exp(-sum_{j=i+1..t} alpha_j), 1-based indices.
inline double decay_between(std::span<const double> alphas, std::size_t t, std::size_t i) {
  double b = 0.0;
  for (std::size_t j = i + 1; j <= t; ++j) b -= alphas[j - 1];
  return std::exp(b);
}

// M_t from its definition. Windows before the first token are clipped.
inline MemoryState build_memory(MemoryKind kind, const MemorySequence& s, const FeatureMap& fm, std::size_t t,
                                std::size_t w = 1) {
  detail::require_time(s, t);
  if (kind != MemoryKind::softmax && w < 1) throw ShapeError("window must be >= 1");
  MemoryState st{MatrixD(fm.feature_dim(), s.values.cols()), t, kind};
  const std::size_t lo = kind == MemoryKind::softmax ? 1 : (t > w ? t - w + 1 : 1);
  for (std::size_t i = lo; i <= t; ++i) {
    double coef = 0.0;
    switch (kind) {
      case MemoryKind::softmax: coef = 1.0 / static_cast<double>(t); break;
      case MemoryKind::swa: coef = 1.0 / static_cast<double>(w); break;
      case MemoryKind::gatedfwa: coef = decay_between(s.alphas, t, i) / static_cast<double>(w); break;
    }
    detail::add_outer(st.m, fm(s.keys.row(i - 1)), s.values.row(i - 1), coef);
  }
  return st;
}

// ||M_t - ((t-1)/t M_{t-1} + (1/t) phi(k_t)^T v_t)||_F
inline double check_recurrence_softmax(const MemorySequence& s, const FeatureMap& fm, std::size_t t) {
  if (t < 2) throw ShapeError("softmax recurrence needs t >= 2");
  const MatrixD mt = build_memory(MemoryKind::softmax, s, fm, t).m;
  const MatrixD prev = build_memory(MemoryKind::softmax, s, fm, t - 1).m;
  const double td = static_cast<double>(t);
  const MatrixD rhs = scaled(prev, (td - 1.0) / td) + scaled(detail::outer(fm, s, t), 1.0 / td);
  return frobenius_norm(mt - rhs);
}

// ||M_t - (M_{t-1} + (1/w)(phi(k_t)^T v_t - phi(k_{t-w})^T v_{t-w}))||_F
inline double check_recurrence_swa(const MemorySequence& s, const FeatureMap& fm, std::size_t t, std::size_t w) {
  if (w < 1 || t <= w) throw ShapeError("swa recurrence needs t > w >= 1");
  const MatrixD mt = build_memory(MemoryKind::swa, s, fm, t, w).m;
  const MatrixD prev = build_memory(MemoryKind::swa, s, fm, t - 1, w).m;
  const double inv_w = 1.0 / static_cast<double>(w);
  const MatrixD rhs = prev + scaled(detail::outer(fm, s, t) - detail::outer(fm, s, t - w), inv_w);
  return frobenius_norm(mt - rhs);
}

// Coefficient on the token leaving the window in the gated recurrence.
enum class LeavingCoefficient {
  printed,  // c_t = prod_{j=t-w+1..t-1} exp(-alpha_j)
  exact,    // exp(B_{t,t-w}) = exp(-alpha_t) c_t
};

inline const char* to_string(LeavingCoefficient c) {
  return c == LeavingCoefficient::printed ? "c_t" : "exp(-alpha_t)*c_t";
}

inline double window_product(std::span<const double> alphas, std::size_t t, std::size_t w) {
  double s = 0.0;
  for (std::size_t j = t - w + 1; j <= t - 1; ++j) s -= alphas[j - 1];
  return std::exp(s);
}

inline double leaving_coefficient(LeavingCoefficient which, std::span<const double> alphas, std::size_t t,
                                  std::size_t w) {
  const double c = window_product(alphas, t, w);
  return which == LeavingCoefficient::printed ? c : std::exp(-alphas[t - 1]) * c;
}

struct GatedRecurrenceCheck {
  double residual_printed = 0.0;
  double residual_exact = 0.0;

  // The candidate whose residual is within `tol`, preferring the exact one.
  [[nodiscard]] LeavingCoefficient verdict(double tol) const {
    if (residual_exact <= tol) return LeavingCoefficient::exact;
    if (residual_printed <= tol) return LeavingCoefficient::printed;
    return residual_exact <= residual_printed ? LeavingCoefficient::exact : LeavingCoefficient::printed;
  }
};

// M_t against exp(-alpha_t) M_{t-1} + (1/w)(phi_t v_t - coef * phi_{t-w} v_{t-w})
// for both leaving-coefficient candidates.
inline GatedRecurrenceCheck check_recurrence_gatedfwa(const MemorySequence& s, const FeatureMap& fm,
                                                      std::size_t t, std::size_t w) {
  if (w < 1 || t <= w) throw ShapeError("gated recurrence needs t > w >= 1");
  require_shape(s.alphas.size() == s.length(), "alphas must have one entry per token");
  const MatrixD mt = build_memory(MemoryKind::gatedfwa, s, fm, t, w).m;
  const MatrixD prev = build_memory(MemoryKind::gatedfwa, s, fm, t - 1, w).m;
  const double inv_w = 1.0 / static_cast<double>(w);
  const MatrixD carried = scaled(prev, std::exp(-s.alphas[t - 1]));
  const MatrixD entering = detail::outer(fm, s, t);
  const MatrixD leaving = detail::outer(fm, s, t - w);
  auto residual = [&](LeavingCoefficient which) {
    const double coef = leaving_coefficient(which, s.alphas, t, w);
    const MatrixD rhs = carried + scaled(entering - scaled(leaving, coef), inv_w);
    return frobenius_norm(mt - rhs);
  };
  return {residual(LeavingCoefficient::printed), residual(LeavingCoefficient::exact)};
}

// Sign convention for the difference term of the windowed objectives.
enum class DeltaSign {
  leaving_minus_entering,  // phi_{t-w}^T v_{t-w} - phi_t^T v_t
  entering_minus_leaving,  // phi_t^T v_t - phi_{t-w}^T v_{t-w}
};

inline const char* to_string(DeltaSign d) {
  return d == DeltaSign::leaving_minus_entering ? "leaving-entering" : "entering-leaving";
}

inline MatrixD window_delta(const MemorySequence& s, const FeatureMap& fm, std::size_t t, std::size_t w,
                            DeltaSign sign) {
  const MatrixD leaving = detail::outer(fm, s, t - w);
  const MatrixD entering = detail::outer(fm, s, t);
  return sign == DeltaSign::leaving_minus_entering ? leaving - entering : entering - leaving;
}

struct ObjectiveTerms {
  LeavingCoefficient coefficient = LeavingCoefficient::exact;
  DeltaSign sign = DeltaSign::leaving_minus_entering;
};

// Objective value L_t(M) for a given memory M standing in for M_{t-1}.
inline double objective_value(MemoryKind kind, const MatrixD& m, const MemorySequence& s, const FeatureMap& fm,
                              std::size_t t, std::size_t w, ObjectiveTerms terms = {}) {
  detail::require_time(s, t);
  const double norm2 = detail::frob_inner(m, m);
  const MatrixD cur = detail::outer(fm, s, t);
  switch (kind) {
    case MemoryKind::softmax: {
      const double td = static_cast<double>(t);
      return norm2 / (2.0 * td) - detail::frob_inner(m, cur) / td;
    }
    case MemoryKind::swa:
      return detail::frob_inner(m, window_delta(s, fm, t, w, DeltaSign::leaving_minus_entering)) /
             static_cast<double>(w);
    case MemoryKind::gatedfwa: {
      const double a = s.alphas[t - 1];
      const double c = leaving_coefficient(terms.coefficient, s.alphas, t, w);
      const MatrixD target = scaled(window_delta(s, fm, t, w, terms.sign), c) + scaled(cur, 1.0 - c);
      return 0.5 * (1.0 - std::exp(-a)) * norm2 - detail::frob_inner(m, target) / static_cast<double>(w);
    }
  }
  return 0.0;
}

// Analytic gradient of objective_value with respect to M.
inline MatrixD objective_gradient(MemoryKind kind, const MatrixD& m, const MemorySequence& s, const FeatureMap& fm,
                                  std::size_t t, std::size_t w, ObjectiveTerms terms = {}) {
  const MatrixD cur = detail::outer(fm, s, t);
  switch (kind) {
    case MemoryKind::softmax: {
      const double td = static_cast<double>(t);
      return scaled(m, 1.0 / td) - scaled(cur, 1.0 / td);
    }
    case MemoryKind::swa:
      return scaled(window_delta(s, fm, t, w, DeltaSign::leaving_minus_entering), 1.0 / static_cast<double>(w));
    case MemoryKind::gatedfwa: {
      const double a = s.alphas[t - 1];
      const double c = leaving_coefficient(terms.coefficient, s.alphas, t, w);
      const MatrixD target = scaled(window_delta(s, fm, t, w, terms.sign), c) + scaled(cur, 1.0 - c);
      return scaled(m, 1.0 - std::exp(-a)) - scaled(target, 1.0 / static_cast<double>(w));
    }
  }
  return {};
}

struct ObjectiveCheck {
  MemoryKind kind = MemoryKind::softmax;
  double residual = 0.0;  // softmax / swa, or the best gated combination
  // Gated only: [coefficient][sign], coefficient 0 = printed, 1 = exact.
  double gated[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  ObjectiveTerms best{};

  [[nodiscard]] double gated_residual(LeavingCoefficient c, DeltaSign d) const {
    return gated[c == LeavingCoefficient::exact][d == DeltaSign::entering_minus_leaving];
  }
};

// ||(M_{t-1} - grad L_t(M_{t-1})) - M_t||_F with both memories built from
// their definitions. The gated objective is evaluated for every combination
// of leaving coefficient and difference sign.
inline ObjectiveCheck check_objective_consistency(MemoryKind kind, const MemorySequence& s, const FeatureMap& fm,
                                                  std::size_t t, std::size_t w = 1) {
  if (t < 2) throw ShapeError("objective check needs t >= 2");
  if (kind != MemoryKind::softmax && t <= w) throw ShapeError("windowed objective needs t > w");
  const MatrixD mt = build_memory(kind, s, fm, t, w).m;
  const MatrixD prev = build_memory(kind, s, fm, t - 1, w).m;
  ObjectiveCheck out;
  out.kind = kind;
  if (kind != MemoryKind::gatedfwa) {
    out.residual = frobenius_norm((prev - objective_gradient(kind, prev, s, fm, t, w)) - mt);
    return out;
  }
  out.residual = std::numeric_limits<double>::infinity();
  for (auto c : {LeavingCoefficient::printed, LeavingCoefficient::exact}) {
    for (auto d : {DeltaSign::leaving_minus_entering, DeltaSign::entering_minus_leaving}) {
      const ObjectiveTerms terms{c, d};
      const double r = frobenius_norm((prev - objective_gradient(kind, prev, s, fm, t, w, terms)) - mt);
      out.gated[c == LeavingCoefficient::exact][d == DeltaSign::entering_minus_leaving] = r;
      if (r < out.residual) {
        out.residual = r;
        out.best = terms;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Objective pathologies.

// |L_t(M)| of the softmax objective for a fixed memory and a fixed incoming
// pair (k, v), one value per entry of `ts`.
inline std::vector<double> softmax_objective_decay(const MatrixD& m, std::span<const double> k,
                                                   std::span<const double> v, const FeatureMap& fm,
                                                   std::span<const std::size_t> ts) {
  std::size_t t_max = 1;
  for (std::size_t t : ts) t_max = std::max(t_max, t);
  MemorySequence s{MatrixD(t_max, k.size()), MatrixD(t_max, v.size()), std::vector<double>(t_max)};
  for (std::size_t r = 0; r < t_max; ++r) {
    std::copy(k.begin(), k.end(), s.keys.row(r).begin());
    std::copy(v.begin(), v.end(), s.values.row(r).begin());
  }
  std::vector<double> out;
  for (std::size_t t : ts) out.push_back(std::abs(objective_value(MemoryKind::softmax, m, s, fm, t, 1)));
  return out;
}

// SWA objective evaluated along the ray M = c * (-Delta_t), one value per c.
inline std::vector<double> swa_objective_ray(const MemorySequence& s, const FeatureMap& fm, std::size_t t,
                                             std::size_t w, std::span<const double> cs) {
  detail::require_time(s, t);
  if (t <= w) throw ShapeError("windowed objective needs t > w");
  const MatrixD delta = window_delta(s, fm, t, w, DeltaSign::leaving_minus_entering);
  std::vector<double> out;
  for (double c : cs) out.push_back(objective_value(MemoryKind::swa, scaled(delta, -c), s, fm, t, w));
  return out;
}

// ---------------------------------------------------------------------------
// Gradient path through the gated recurrence.

struct GradientPath {
  MatrixD analytic;         // 1 x H: prod_{i=p+1..t} exp(-alpha_i)
  MatrixD numerical;        // 1 x H: mean Jacobian diagonal from perturbing M_p
  double max_off_diagonal = 0.0;

  [[nodiscard]] double rel_error() const { return max_rel_error(numerical, analytic); }
};

// `alphas` is T x H with row i-1 holding alpha_i. The numerical check rolls a
// random memory of shape rows x cols through M_i = exp(-alpha_i) M_{i-1} + D_i
// and differentiates M_t with respect to every entry of M_p by central
// differences.
inline GradientPath gradient_path_product(const MatrixD& alphas, std::size_t p, std::size_t t,
                                          std::uint64_t seed = 0, std::size_t rows = 3, std::size_t cols = 2) {
  if (!(p < t) || t > alphas.rows()) throw ShapeError("gradient path needs p < t <= T");
  const std::size_t heads = alphas.cols();
  GradientPath out{MatrixD(1, heads), MatrixD(1, heads), 0.0};
  Rng rng(seed);
  for (std::size_t h = 0; h < heads; ++h) {
    double log_prod = 0.0;
    for (std::size_t i = p + 1; i <= t; ++i) log_prod -= alphas(i - 1, h);
    out.analytic(0, h) = std::exp(log_prod);

    const MatrixD m_p = random_normal<double>(rows, cols, rng);
    std::vector<MatrixD> drive;
    for (std::size_t i = p + 1; i <= t; ++i) drive.push_back(random_normal<double>(rows, cols, rng));
    auto roll = [&](const MatrixD& start) {
      MatrixD m = start;
      for (std::size_t i = p + 1; i <= t; ++i) m = scaled(m, std::exp(-alphas(i - 1, h))) + drive[i - p - 1];
      return m;
    };
    const double eps = 1e-4;
    double diag_sum = 0.0;
    for (std::size_t e = 0; e < m_p.size(); ++e) {
      MatrixD plus = m_p, minus = m_p;
      plus.values()[e] += eps;
      minus.values()[e] -= eps;
      const MatrixD diff = scaled(roll(plus) - roll(minus), 1.0 / (2.0 * eps));
      for (std::size_t f = 0; f < diff.size(); ++f) {
        if (f == e) {
          diag_sum += diff.values()[f];
        } else {
          out.max_off_diagonal = std::max(out.max_off_diagonal, std::abs(diff.values()[f]));
        }
      }
    }
    out.numerical(0, h) = diag_sum / static_cast<double>(m_p.size());
  }
  return out;
}

}  // namespace gfwa
