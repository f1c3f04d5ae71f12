#pragma once

// Primal-dual dynamics for min f(x) + h(x) + g(Ax): the general variable-metric system with
// two implicit resolvent lines and its full-splitting special case M1 = I/tau - c A^T A,
// M2 = 0, where both lines become explicit proxes.

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "opsplit/first_order_flows.hpp"
#include "opsplit/flow_engine.hpp"
#include "opsplit/operator_core.hpp"

namespace opsplit {

struct StructuredProblem {
  ProxObject f;      // on R^n
  SmoothFunction h;  // on R^n, convex
  ProxObject g;      // on R^m
  Matrix A;          // m x n

  Eigen::Index n() const { return A.cols(); }
  Eigen::Index m() const { return A.rows(); }
  double norm_A() const { return linear_map_from_matrix(A).norm_estimate; }
};

struct PDState {
  Vector x, z, y;

  Vector pack() const {
    Vector s(x.size() + z.size() + y.size());
    s << x, z, y;
    return s;
  }
  static PDState unpack(const Vector& s, Eigen::Index n, Eigen::Index m) {
    if (s.size() != n + 2 * m) throw ParameterError("primal-dual state has the wrong dimension");
    return {s.head(n), s.segment(n, m), s.tail(m)};
  }
};

using MetricSchedule = std::function<Matrix(double)>;

struct PDParams {
  double c = 1.0;
  double gamma_relax = 1.0;  // gamma in [0, 1]
  Schedule tau = schedules::constant(1.0);
  ProbeGrid grid{};
};

struct InnerSolverOptions {
  double tol = 1e-10;
  long max_iterations = 100000;
};

inline void validate(const PDParams& params) {
  require_positive(params.c, "penalty c");
  if (!(params.gamma_relax >= 0.0 && params.gamma_relax <= 1.0))
    throw ParameterError("relaxation gamma must lie in [0, 1]");
}

inline void require_tau_admissible(const PDParams& params, double norm_A, double t) {
  const double tau = params.tau(t);
  if (!(tau > 0.0) || params.c * tau * norm_A * norm_A > 1.0 + 1e-12)
    throw HypothesisError("c tau(t) |A|^2 <= 1 fails at t=" + std::to_string(t) + " (value " +
                          std::to_string(params.c * tau * norm_A * norm_A) + ")");
}

/// argmin_u phi(u) + u^T Q u / 2 - w^T u for symmetric positive semidefinite Q, by proximal
/// gradient steps of length 1/lambda_max(Q). Stops when successive iterates differ by at
/// most tol (1 + |u|).
inline Vector solve_metric_resolvent(const ProxObject& phi, const Matrix& Q, const Vector& w,
                                     const Vector& start, InnerSolverOptions opts = {}) {
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (Q + Q.transpose()), Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmax > 0.0)) throw ParameterError("metric of the resolvent subproblem is not positive");
  const double s = 1.0 / lmax;
  Vector u = start;
  double best = kInfinity;
  for (long k = 0; k < opts.max_iterations; ++k) {
    Vector next = phi.prox(s, u - s * (Q * u - w));
    const double change = (next - u).norm();
    best = std::min(best, change);
    u = std::move(next);
    if (change <= opts.tol * (1.0 + u.norm())) return u;
  }
  throw SolverError("metric resolvent: iteration cap reached", best);
}

/// Increment (x', z', y') of the full-splitting system; also used by the discrete step.
inline PDState pd_special_increment(const StructuredProblem& prob, const PDParams& params,
                                    double norm_A, double t, const PDState& s) {
  require_tau_admissible(params, norm_A, t);
  const double tau = params.tau(t);
  const double c = params.c;
  const double gam = params.gamma_relax;
  const Matrix& A = prob.A;
  const Vector Ax = A * s.x;
  const Vector arg = s.x - (c * tau) * (A.transpose() * Ax) + (c * tau) * (A.transpose() * s.z) -
                     tau * (A.transpose() * s.y) - tau * prob.h.gradient(s.x);
  PDState d;
  d.x = prob.f.prox(tau, arg) - s.x;
  const Vector Adx = A * d.x;
  const Vector p = prox_conjugate(prob.g, c, c * (gam * Adx + Ax) + s.y);
  d.y = p - s.y - c * (gam - 1.0) * Adx;
  d.z = (Ax + Adx) - d.y / c - s.z;
  return d;
}

/// Increment of the general system with metric schedules M1(t), M2(t).
inline PDState pd_general_increment(const StructuredProblem& prob, const PDParams& params,
                                    const Matrix& M1, const Matrix& M2, const PDState& s,
                                    InnerSolverOptions opts = {}) {
  const double c = params.c;
  const double gam = params.gamma_relax;
  const Matrix& A = prob.A;
  const Matrix Q1 = c * (A.transpose() * A) + M1;
  const Vector w1 = M1 * s.x + c * (A.transpose() * s.z) - A.transpose() * s.y - prob.h.gradient(s.x);
  const Vector x_next = solve_metric_resolvent(prob.f, Q1, w1, s.x, opts);
  PDState d;
  d.x = x_next - s.x;
  Matrix Q2 = M2;
  Q2.diagonal().array() += c;
  const Vector w2 = M2 * s.z + c * (A * (gam * d.x + s.x)) + s.y;
  const Vector z_next = solve_metric_resolvent(prob.g, Q2, w2, s.z, opts);
  d.z = z_next - s.z;
  d.y = c * (A * x_next) - c * z_next;
  return d;
}

inline FlowField pd_field_special(const StructuredProblem& prob, const PDParams& params) {
  validate(params);
  const double norm_A = prob.norm_A();
  require_schedule_within(params.tau, 0.0, 1.0 / (params.c * norm_A * norm_A), "step tau",
                          params.grid.t0, params.grid.t1, params.grid.samples);
  const Eigen::Index n = prob.n(), m = prob.m();
  FlowField field;
  field.order = 1;
  field.dim = n + 2 * m;
  field.label = "pd_special";
  field.breakpoints = params.tau.breakpoints;
  field.first = [prob, params, norm_A, n, m](double t, const Vector& state) -> Vector {
    return pd_special_increment(prob, params, norm_A, t, PDState::unpack(state, n, m)).pack();
  };
  return field;
}

/// Metric choice that turns the general system into the full-splitting one.
inline MetricSchedule full_splitting_M1(const StructuredProblem& prob, const PDParams& params) {
  const Matrix AtA = prob.A.transpose() * prob.A;
  const Schedule tau = params.tau;
  const double c = params.c;
  return [AtA, tau, c](double t) -> Matrix {
    Matrix M = -c * AtA;
    M.diagonal().array() += 1.0 / tau(t);
    return M;
  };
}

inline MetricSchedule zero_metric(Eigen::Index dim) {
  return [dim](double) -> Matrix { return Matrix::Zero(dim, dim); };
}

/// Smallest eigenvalue of the symmetric part; M is positive semidefinite when this is >= -1e-12.
inline double min_eigenvalue(const Matrix& M) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly)
      .eigenvalues()
      .minCoeff();
}

inline FlowField pd_field_general(const StructuredProblem& prob, const PDParams& params,
                                  MetricSchedule M1, MetricSchedule M2, InnerSolverOptions opts = {}) {
  validate(params);
  const Eigen::Index n = prob.n(), m = prob.m();
  FlowField field;
  field.order = 1;
  field.dim = n + 2 * m;
  field.label = "pd_general";
  field.first = [prob, params, M1, M2, opts, n, m](double t, const Vector& state) -> Vector {
    const Matrix m1 = M1(t), m2 = M2(t);
    if (min_eigenvalue(m1) < -1e-12 || min_eigenvalue(m2) < -1e-12)
      throw HypothesisError("metric M1(t) or M2(t) is not positive semidefinite at t=" + std::to_string(t));
    return pd_general_increment(prob, params, m1, m2, PDState::unpack(state, n, m), opts).pack();
  };
  return field;
}

/// l(x, z, y) = f(x) + h(x) + g(z) + <y, Ax - z>; +inf outside dom f x dom g.
inline double lagrangian_eval(const StructuredProblem& prob, const PDState& s) {
  const double fx = prob.f(s.x), gz = prob.g(s.z);
  if (!std::isfinite(fx) || !std::isfinite(gz)) return kInfinity;
  return fx + prob.h(s.x) + gz + s.y.dot(prob.A * s.x - s.z);
}

/// Optimality residuals of a candidate saddle point: primal prox residual, dual prox
/// residual and feasibility, each measured as a fixed-point defect.
struct BlockResiduals {
  double primal = 0.0;
  double dual = 0.0;
  double feasibility = 0.0;
  double max() const { return std::max({primal, dual, feasibility}); }
};

inline BlockResiduals block_residuals(const StructuredProblem& prob, const PDState& s, double step = 1.0) {
  BlockResiduals r;
  const Vector grad = prob.h.gradient(s.x) + prob.A.transpose() * s.y;
  r.primal = (prob.f.prox(step, s.x - step * grad) - s.x).norm();
  r.dual = (prob.g.prox(step, s.z + step * s.y) - s.z).norm();
  r.feasibility = (prob.A * s.x - s.z).norm();
  return r;
}

/// Probes feas_norm, lagrangian, block_residuals and (special field) the consistency of the
/// dual line with the conjugate-prox relation.
inline std::vector<Probe> primal_dual_probes(const StructuredProblem& prob, const PDParams& params) {
  const Eigen::Index n = prob.n(), m = prob.m();
  std::vector<Probe> probes{
      {"feas_norm",
       [prob, n, m](const ProbePoint& p) {
         const PDState s = PDState::unpack(p.x, n, m);
         return (prob.A * s.x - s.z).norm();
       }},
      {"lagrangian",
       [prob, n, m](const ProbePoint& p) { return lagrangian_eval(prob, PDState::unpack(p.x, n, m)); }},
      {"block_residuals",
       [prob, n, m](const ProbePoint& p) { return block_residuals(prob, PDState::unpack(p.x, n, m)).max(); }},
  };
  probes.push_back({"dual_line_consistency", [prob, params, n, m](const ProbePoint& p) {
                      const PDState s = PDState::unpack(p.x, n, m);
                      const PDState d = PDState::unpack(p.v, n, m);
                      const double c = params.c, gam = params.gamma_relax;
                      const Vector Adx = prob.A * d.x;
                      const Vector lhs = d.y + s.y + c * (gam - 1.0) * Adx;
                      const Vector rhs = prox_conjugate(prob.g, c, c * prob.A * (gam * d.x + s.x) + s.y);
                      return (lhs - rhs).norm();
                    }});
  return probes;
}

struct SandwichReport {
  bool pass = true;
  double worst_margin = kInfinity;
  int violations = 0;
};

/// l(xb, zb, y) <= l(xb, zb, yb) <= l(x, z, yb), each side with slack `slack`, for random
/// perturbations of scale `radius` around the candidate saddle point.
template <class Rng>
SandwichReport lagrangian_sandwich(const StructuredProblem& prob, const PDState& bar, Rng& rng,
                                   int probes = 100, double radius = 1.0, double slack = 1e-6) {
  SandwichReport r;
  std::normal_distribution<double> normal(0.0, radius);
  auto perturb = [&](const Vector& v) {
    Vector out = v;
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += normal(rng);
    return out;
  };
  const double center = lagrangian_eval(prob, bar);
  for (int k = 0; k < probes; ++k) {
    const double dual_side = lagrangian_eval(prob, {bar.x, bar.z, perturb(bar.y)});
    const double primal_side = lagrangian_eval(prob, {perturb(bar.x), perturb(bar.z), bar.y});
    const double margin = std::min(center - dual_side, primal_side - center) + slack;
    r.worst_margin = std::min(r.worst_margin, margin);
    if (margin < 0.0) {
      r.pass = false;
      ++r.violations;
    }
  }
  return r;
}

}  // namespace opsplit
