#pragma once

// Vectors, convex functions accessed through prox oracles, monotone operators accessed
// through resolvents, and the resolvent algebra built on top of them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "opsplit/errors.hpp"

namespace opsplit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

inline bool all_finite(const Vector& x) { return x.size() > 0 && x.allFinite(); }

inline void require_vector(const Vector& x, const char* what) {
  if (x.size() == 0) throw ParameterError(std::string(what) + ": empty vector");
  if (!x.allFinite()) throw ParameterError(std::string(what) + ": non-finite entry");
}

inline void require_positive(double value, const char* what) {
  if (!(value > 0.0) || !std::isfinite(value))
    throw ParameterError(std::string(what) + " must be positive and finite, got " +
                         std::to_string(value));
}

inline Vector make_vector(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double c : values) v(i++) = c;
  require_vector(v, "vector");
  return v;
}

enum class ProxKind { analytic, numeric_fallback };

/// Proper convex lsc function, accessed through its value and its proximal map
/// prox_{gamma f}(x) = argmin_y f(y) + |y - x|^2 / (2 gamma).
struct ProxObject {
  std::string name;
  std::function<double(const Vector&)> value;  // +inf outside dom f
  std::function<Vector(double, const Vector&)> prox;
  ProxKind kind = ProxKind::analytic;

  double operator()(const Vector& x) const { return value(x); }
};

/// Single-valued operator with optional cocoercivity / Lipschitz constants.
struct SingleValuedMap {
  std::string name;
  std::function<Vector(const Vector&)> eval;
  std::optional<double> cocoercivity;  // beta: <x-y, Bx-By> >= beta |Bx-By|^2
  std::optional<double> lipschitz;     // L:    |Bx-By| <= L |x-y|
  bool differentiable = false;

  Vector operator()(const Vector& x) const { return eval(x); }
};

/// Maximally monotone (possibly set-valued) operator, represented by its resolvent
/// J_{gamma A} = (Id + gamma A)^{-1}. Single-valued operators may also carry `single`.
struct MonotoneMap {
  std::string name;
  std::function<Vector(double, const Vector&)> resolvent;
  double strong_modulus = 0.0;  // nu >= 0
  std::optional<SingleValuedMap> single;
};

/// Differentiable function with Lipschitz gradient. `grad_lipschitz` is the Lipschitz
/// constant L of the gradient; the cocoercivity constant of a convex g is 1/L.
struct SmoothFunction {
  std::string name;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  double grad_lipschitz = 1.0;
  bool convex = true;

  double operator()(const Vector& x) const { return value(x); }
};

/// Bounded linear map R^n -> R^m with its adjoint and an upper bound on the operator norm.
struct LinearMap {
  Eigen::Index in_dim = 0;
  Eigen::Index out_dim = 0;
  std::function<Vector(const Vector&)> apply;
  std::function<Vector(const Vector&)> adjoint_apply;
  double norm_estimate = 0.0;

  Vector operator()(const Vector& x) const { return apply(x); }
};

// ---------------------------------------------------------------------------
// Resolvent algebra

inline Vector prox_eval(const ProxObject& f, double gamma, const Vector& x) {
  require_positive(gamma, "prox step gamma");
  return f.prox(gamma, x);
}

inline Vector resolvent_eval(const MonotoneMap& A, double gamma, const Vector& x) {
  require_positive(gamma, "resolvent step gamma");
  return A.resolvent(gamma, x);
}

/// R_{gamma A} = 2 J_{gamma A} - Id.
inline Vector reflected_resolvent(const MonotoneMap& A, double gamma, const Vector& x) {
  return 2.0 * resolvent_eval(A, gamma, x) - x;
}

/// Yosida regularization A_lambda = (Id - J_{lambda A}) / lambda, (1/lambda)-Lipschitz.
inline Vector yosida_eval(const MonotoneMap& A, double lambda, const Vector& x) {
  require_positive(lambda, "Yosida parameter lambda");
  return (x - resolvent_eval(A, lambda, x)) / lambda;
}

/// delta = (4 beta - gamma) / (2 beta); J_{gamma A}(Id - gamma B) is 1/delta-averaged.
inline double fb_delta(double beta, double gamma) {
  require_positive(beta, "cocoercivity beta");
  return (4.0 * beta - gamma) / (2.0 * beta);
}

inline double require_cocoercivity(const SingleValuedMap& B) {
  if (!B.cocoercivity)
    throw HypothesisError("operator '" + B.name + "' has no declared cocoercivity constant");
  return *B.cocoercivity;
}

/// Forward-backward map J_{gamma A}(x - gamma B x). Requires gamma in (0, 2 beta) unless
/// `allow_relaxed` acknowledges the relaxed step regime.
inline Vector fb_map(const MonotoneMap& A, const SingleValuedMap& B, double gamma,
                     const Vector& x, bool allow_relaxed = false) {
  const double beta = require_cocoercivity(B);
  require_positive(gamma, "forward-backward step gamma");
  if (!allow_relaxed && !(gamma < 2.0 * beta))
    throw ParameterError("forward-backward step gamma=" + std::to_string(gamma) +
                         " outside (0, 2 beta) with beta=" + std::to_string(beta));
  return A.resolvent(gamma, x - gamma * B(x));
}

/// prox_{c g*}(w) through the Moreau identity: w - c prox_{g/c}(w/c).
inline Vector prox_conjugate(const ProxObject& g, double c, const Vector& w) {
  require_positive(c, "conjugate prox scale c");
  return w - c * g.prox(1.0 / c, w / c);
}

// ---------------------------------------------------------------------------
// Numeric prox fallback

namespace detail {

// phi(a) - phi(b) for phi(s) = F(s) + (s - x)^2 / (2 gamma), with the quadratic part
// differenced exactly so the comparison keeps full relative accuracy.
template <class F>
double prox_objective_gap(const F& value, double a, double b, double x, double gamma) {
  const double fa = value(a);
  const double fb = value(b);
  if (std::isinf(fa) && std::isinf(fb)) return 0.0;
  if (std::isinf(fa)) return kInfinity;
  if (std::isinf(fb)) return -kInfinity;
  return (fa - fb) + (a - b) * (a + b - 2.0 * x) / (2.0 * gamma);
}

// Minimizes the strongly convex phi(s) = F(s) + (s - x)^2/(2 gamma) over [lo, hi].
template <class F>
double minimize_prox_1d(const F& value, double x, double gamma, double lo, double hi) {
  // Bracketing by three-point convex comparisons: every branch is an exact consequence
  // of convexity, so the bracket halves and never loses the minimizer (up to rounding).
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double h = 0.25 * (hi - lo);
    if (mid - h <= lo && mid + h >= hi) break;
    if (prox_objective_gap(value, mid - h, mid, x, gamma) < 0.0) {
      hi = mid;
    } else if (prox_objective_gap(value, mid + h, mid, x, gamma) < 0.0) {
      lo = mid;
    } else {
      lo = mid - h;
      hi = mid + h;
    }
  }
  double y = 0.5 * (lo + hi);

  // Near a smooth minimizer the comparisons above stall at ~sqrt(eps) because phi is flat;
  // finish with Newton steps on phi' using difference quotients. Kinks are left alone.
  for (int it = 0; it < 4; ++it) {
    const double hd = 1e-6 * (1.0 + std::abs(y));
    const double f0 = value(y);
    const double fp = value(y + hd);
    const double fm = value(y - hd);
    if (!std::isfinite(f0) || !std::isfinite(fp) || !std::isfinite(fm)) break;
    const double dplus = (fp - f0) / hd;
    const double dminus = (f0 - fm) / hd;
    if (dplus - dminus > 1e-4 * (1.0 + std::abs(dplus) + std::abs(dminus))) break;
    const double slope = 0.5 * (dplus + dminus) + (y - x) / gamma;
    const double curvature = (dplus - dminus) / hd + 1.0 / gamma;
    const double step = slope / curvature;
    if (!(std::abs(step) <= hd)) break;
    const double next = std::clamp(y - step, lo - hd, hi + hd);
    if (next == y) break;
    y = next;
  }
  return y;
}

}  // namespace detail

struct NumericProxOptions {
  double tol = 1e-10;
  long max_iterations = 100000;
};

/// Prox of a convex f known only through its value, restricted to the box [lo, hi].
/// Cyclic coordinate minimization with an exact convex bracketing search per coordinate.
/// Converges for separable or differentiable f; the returned point satisfies
/// |y - sweep(y)| <= tol, where sweep is one more pass of the coordinate map.
inline Vector prox_numeric(const std::function<double(const Vector&)>& f_value, double gamma,
                           const Vector& x, const Vector& lo, const Vector& hi,
                           NumericProxOptions opts = {}) {
  require_positive(gamma, "prox step gamma");
  require_positive(opts.tol, "prox tolerance");
  require_vector(x, "prox_numeric point");
  if (lo.size() != x.size() || hi.size() != x.size())
    throw ParameterError("prox_numeric: box dimension mismatch");

  Vector y = x.cwiseMax(lo).cwiseMin(hi);
  auto sweep = [&](Vector& point) {
    for (Eigen::Index i = 0; i < point.size(); ++i) {
      auto restricted = [&](double s) {
        const double saved = point(i);
        point(i) = s;
        const double v = f_value(point);
        point(i) = saved;
        return v;
      };
      point(i) = detail::minimize_prox_1d(restricted, x(i), gamma, lo(i), hi(i));
    }
  };

  double best = kInfinity;
  for (long iter = 0; iter < opts.max_iterations; ++iter) {
    Vector next = y;
    sweep(next);
    const double residual = (next - y).norm();
    best = std::min(best, residual);
    y = std::move(next);
    if (residual <= opts.tol) return y;
  }
  throw SolverError("prox_numeric: iteration cap reached", best);
}

// ---------------------------------------------------------------------------
// Catalog of closed-form proxes

namespace prox {

inline double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

inline Vector soft_threshold(const Vector& v, double t) {
  return v.unaryExpr([t](double c) { return soft_threshold(c, t); });
}

inline ProxObject zero() {
  return {"zero", [](const Vector&) { return 0.0; },
          [](double, const Vector& x) { return Vector(x); }, ProxKind::analytic};
}

/// mu * |x|_1
inline ProxObject l1(double mu = 1.0) {
  require_positive(mu, "l1 weight");
  return {"l1", [mu](const Vector& x) { return mu * x.lpNorm<1>(); },
          [mu](double gamma, const Vector& x) { return soft_threshold(x, gamma * mu); },
          ProxKind::analytic};
}

/// (scale / 2) |x|^2
inline ProxObject squared_l2(double scale = 1.0) {
  require_positive(scale, "squared l2 scale");
  return {"squared_l2", [scale](const Vector& x) { return 0.5 * scale * x.squaredNorm(); },
          [scale](double gamma, const Vector& x) { return Vector(x / (1.0 + gamma * scale)); },
          ProxKind::analytic};
}

namespace detail {
inline double membership_tol(double scale) { return 1e-9 * (1.0 + scale); }
}  // namespace detail

inline ProxObject box_indicator(const Vector& lo, const Vector& hi) {
  if (lo.size() != hi.size() || (lo.array() > hi.array()).any())
    throw ParameterError("box_indicator: invalid bounds");
  return {"box",
          [lo, hi](const Vector& x) {
            const double tol = detail::membership_tol(x.lpNorm<Eigen::Infinity>());
            const bool inside = ((x - lo).array() >= -tol).all() && ((hi - x).array() >= -tol).all();
            return inside ? 0.0 : kInfinity;
          },
          [lo, hi](double, const Vector& x) { return Vector(x.cwiseMax(lo).cwiseMin(hi)); },
          ProxKind::analytic};
}

inline ProxObject box_indicator(Eigen::Index dim, double lo, double hi) {
  return box_indicator(Vector::Constant(dim, lo), Vector::Constant(dim, hi));
}

inline ProxObject ball_indicator(const Vector& center, double radius) {
  require_positive(radius, "ball radius");
  auto project = [center, radius](const Vector& x) -> Vector {
    const Vector d = x - center;
    const double n = d.norm();
    return n <= radius ? Vector(x) : Vector(center + (radius / n) * d);
  };
  return {"ball",
          [center, radius](const Vector& x) {
            return (x - center).norm() <= radius + detail::membership_tol(radius) ? 0.0 : kInfinity;
          },
          [project](double, const Vector& x) { return project(x); }, ProxKind::analytic};
}

/// Indicator of {x : <a, x> <= b}.
inline ProxObject halfspace_indicator(const Vector& a, double b) {
  const double a2 = a.squaredNorm();
  require_positive(a2, "halfspace normal norm");
  return {"halfspace",
          [a, b](const Vector& x) {
            return a.dot(x) <= b + detail::membership_tol(std::abs(b)) ? 0.0 : kInfinity;
          },
          [a, b, a2](double, const Vector& x) -> Vector {
            const double excess = a.dot(x) - b;
            return excess <= 0.0 ? Vector(x) : Vector(x - (excess / a2) * a);
          },
          ProxKind::analytic};
}

/// Indicator of the affine set {x : M x = b}; M must have full row rank.
inline ProxObject affine_indicator(const Matrix& M, const Vector& b) {
  if (M.rows() != b.size()) throw ParameterError("affine_indicator: dimension mismatch");
  const Eigen::LDLT<Matrix> gram((M * M.transpose()).eval());
  if (gram.info() != Eigen::Success || !gram.isPositive())
    throw ParameterError("affine_indicator: constraint matrix must have full row rank");
  return {"affine",
          [M, b](const Vector& x) {
            return (M * x - b).norm() <= detail::membership_tol(b.norm() + x.norm()) ? 0.0 : kInfinity;
          },
          [M, b, gram](double, const Vector& x) -> Vector {
            return x - M.transpose() * gram.solve(M * x - b);
          },
          ProxKind::analytic};
}

/// Indicator of the single point {p}.
inline ProxObject point_indicator(const Vector& p) {
  return {"point",
          [p](const Vector& x) {
            return (x - p).norm() <= detail::membership_tol(p.norm()) ? 0.0 : kInfinity;
          },
          [p](double, const Vector&) { return Vector(p); }, ProxKind::analytic};
}

/// mu |x|_1 + sum_i (d_i / 2) (x_i - c_i)^2 with d_i >= 0.
inline ProxObject l1_plus_separable_quadratic(double mu, const Vector& d, const Vector& c) {
  if (mu < 0.0 || (d.array() < 0.0).any() || d.size() != c.size())
    throw ParameterError("l1_plus_separable_quadratic: invalid weights");
  return {"l1_plus_quadratic",
          [mu, d, c](const Vector& x) {
            return mu * x.lpNorm<1>() + 0.5 * (d.array() * (x - c).array().square()).sum();
          },
          [mu, d, c](double gamma, const Vector& x) -> Vector {
            Vector out(x.size());
            for (Eigen::Index i = 0; i < x.size(); ++i) {
              const double curvature = d(i) + 1.0 / gamma;
              const double center = (d(i) * c(i) + x(i) / gamma) / curvature;
              out(i) = soft_threshold(center, mu / curvature);
            }
            return out;
          },
          ProxKind::analytic};
}

/// Wraps a value-only convex function; prox computed by prox_numeric over [lo, hi].
inline ProxObject numeric(std::string name, std::function<double(const Vector&)> value,
                          const Vector& lo, const Vector& hi, NumericProxOptions opts = {}) {
  auto prox_fn = [value, lo, hi, opts](double gamma, const Vector& x) {
    return prox_numeric(value, gamma, x, lo, hi, opts);
  };
  return {std::move(name), std::move(value), std::move(prox_fn), ProxKind::numeric_fallback};
}

}  // namespace prox

// ---------------------------------------------------------------------------
// Operators

namespace ops {

inline MonotoneMap zero_operator() {
  SingleValuedMap zero{"zero", [](const Vector& x) { return Vector(Vector::Zero(x.size())); },
                       std::nullopt, 0.0, true};
  return {"zero", [](double, const Vector& x) { return Vector(x); }, 0.0, zero};
}

/// The subdifferential of f; its resolvent is prox_{gamma f}.
inline MonotoneMap subdifferential(const ProxObject& f, double strong_modulus = 0.0) {
  return {"subdiff(" + f.name + ")", f.prox, strong_modulus, std::nullopt};
}

/// Normal cone of a closed convex set given by its indicator; resolvent is the projection.
inline MonotoneMap normal_cone(const ProxObject& indicator) {
  return {"normal_cone(" + indicator.name + ")", indicator.prox, 0.0, std::nullopt};
}

/// x -> M x + q for M with positive semidefinite symmetric part.
inline SingleValuedMap affine_operator(std::string name, const Matrix& M, const Vector& q,
                                       std::optional<double> cocoercivity,
                                       std::optional<double> lipschitz) {
  return {std::move(name), [M, q](const Vector& x) { return Vector(M * x + q); }, cocoercivity,
          lipschitz, true};
}

/// Monotone affine operator with its resolvent (Id + gamma M)^{-1}(x + ... ).
inline MonotoneMap affine_monotone(std::string name, const Matrix& M, const Vector& q,
                                   std::optional<double> cocoercivity,
                                   std::optional<double> lipschitz) {
  const Eigen::Index n = M.rows();
  auto resolvent = [M, q, n](double gamma, const Vector& x) -> Vector {
    const Matrix system = Matrix::Identity(n, n) + gamma * M;
    return system.partialPivLu().solve(x - gamma * q);
  };
  const Matrix sym = 0.5 * (M + M.transpose());
  const double nu = std::max(0.0, Eigen::SelfAdjointEigenSolver<Matrix>(sym).eigenvalues().minCoeff());
  return {name, resolvent, nu, affine_operator(name, M, q, cocoercivity, lipschitz)};
}

/// Gradient of a smooth function as a single-valued operator; for convex g it is
/// 1/L-cocoercive (Baillon-Haddad).
inline SingleValuedMap gradient_of(const SmoothFunction& g) {
  std::optional<double> beta;
  if (g.convex) beta = 1.0 / g.grad_lipschitz;
  return {"grad(" + g.name + ")", g.gradient, beta, g.grad_lipschitz, true};
}

}  // namespace ops

namespace functions {

/// 0.5 x^T Q x - b^T x + c0 with symmetric positive semidefinite Q.
inline SmoothFunction quadratic(const Matrix& Q, const Vector& b, double c0 = 0.0) {
  const Matrix sym = 0.5 * (Q + Q.transpose());
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const double L = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
  return {"quadratic",
          [sym, b, c0](const Vector& x) { return 0.5 * x.dot(sym * x) - b.dot(x) + c0; },
          [sym, b](const Vector& x) { return Vector(sym * x - b); }, L,
          eig.eigenvalues().minCoeff() >= -1e-12};
}

/// 0.5 |M x - b|^2
inline SmoothFunction least_squares(const Matrix& M, const Vector& b) {
  const double L = std::max(Eigen::JacobiSVD<Matrix>(M).singularValues()(0), 1e-150);
  return {"least_squares", [M, b](const Vector& x) { return 0.5 * (M * x - b).squaredNorm(); },
          [M, b](const Vector& x) { return Vector(M.transpose() * (M * x - b)); }, L * L, true};
}

inline SmoothFunction zero(Eigen::Index dim) {
  return {"zero", [](const Vector&) { return 0.0; },
          [dim](const Vector& x) { return Vector(Vector::Zero(x.size() > 0 ? x.size() : dim)); },
          1e-300, true};
}

}  // namespace functions

inline LinearMap linear_map_from_matrix(const Matrix& M) {
  const double sigma = M.size() == 0 ? 0.0 : Eigen::JacobiSVD<Matrix>(M).singularValues()(0);
  return {M.cols(), M.rows(), [M](const Vector& x) { return Vector(M * x); },
          [M](const Vector& y) { return Vector(M.transpose() * y); },
          std::max(sigma * (1.0 + 1e-12), 1e-300)};
}

// ---------------------------------------------------------------------------
// Sampled invariant checks

struct SampleCheck {
  bool pass = true;
  double worst_margin = kInfinity;  // min over samples of (allowed - observed)
};

namespace detail {
template <class Rng>
Vector random_vector(Eigen::Index n, double scale, Rng& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

template <class Rng, class Body>
SampleCheck sample_pairs(Eigen::Index n, int pairs, double scale, Rng& rng, Body body) {
  SampleCheck out;
  for (int k = 0; k < pairs; ++k) {
    const Vector x = random_vector(n, scale, rng);
    const Vector y = random_vector(n, scale, rng);
    const double margin = body(x, y);
    out.worst_margin = std::min(out.worst_margin, margin);
    if (margin < 0.0) out.pass = false;
  }
  return out;
}
}  // namespace detail

/// |Jx - Jy|^2 <= <x - y, Jx - Jy> + slack on random pairs.
template <class Rng>
SampleCheck check_firmly_nonexpansive(const MonotoneMap& A, double gamma, Eigen::Index n, Rng& rng,
                                      int pairs = 1000, double slack = 1e-10, double scale = 5.0) {
  return detail::sample_pairs(n, pairs, scale, rng, [&](const Vector& x, const Vector& y) {
    const Vector d = A.resolvent(gamma, x) - A.resolvent(gamma, y);
    return (x - y).dot(d) + slack - d.squaredNorm();
  });
}

template <class Rng>
SampleCheck check_lipschitz(const std::function<Vector(const Vector&)>& map, double L,
                            Eigen::Index n, Rng& rng, int pairs = 1000, double slack = 1e-10,
                            double scale = 5.0) {
  return detail::sample_pairs(n, pairs, scale, rng, [&](const Vector& x, const Vector& y) {
    return L * (x - y).norm() + slack - (map(x) - map(y)).norm();
  });
}

template <class Rng>
SampleCheck check_cocoercive(const SingleValuedMap& B, Eigen::Index n, Rng& rng, int pairs = 1000,
                             double slack = 1e-10, double scale = 5.0) {
  const double beta = require_cocoercivity(B);
  return detail::sample_pairs(n, pairs, scale, rng, [&](const Vector& x, const Vector& y) {
    const Vector d = B(x) - B(y);
    return (x - y).dot(d) + slack - beta * d.squaredNorm();
  });
}

/// Central-difference gradient check with h = 1e-5 and tolerance 1e-4 (1 + |grad_i|).
inline SampleCheck check_gradient(const SmoothFunction& g, const Vector& x, double h = 1e-5) {
  SampleCheck out;
  const Vector grad = g.gradient(x);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    const double fd = (g.value(xp) - g.value(xm)) / (2.0 * h);
    const double margin = 1e-4 * (1.0 + std::abs(grad(i))) - std::abs(fd - grad(i));
    out.worst_margin = std::min(out.worst_margin, margin);
    if (margin < 0.0) out.pass = false;
  }
  return out;
}

template <class Rng>
SampleCheck check_adjoint(const LinearMap& A, Rng& rng, int pairs = 100, double tol = 1e-12) {
  SampleCheck out;
  for (int k = 0; k < pairs; ++k) {
    const Vector x = detail::random_vector(A.in_dim, 1.0, rng);
    const Vector y = detail::random_vector(A.out_dim, 1.0, rng);
    const double gap = std::abs(A(x).dot(y) - x.dot(A.adjoint_apply(y)));
    const Vector u = x.normalized();
    const double norm_margin = A.norm_estimate * (1.0 + 1e-12) - A(u).norm();
    const double margin = std::min(tol * (1.0 + x.norm() * y.norm()) - gap, norm_margin);
    out.worst_margin = std::min(out.worst_margin, margin);
    if (margin < 0.0) out.pass = false;
  }
  return out;
}

}  // namespace opsplit
