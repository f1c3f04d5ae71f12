#pragma once

// Iterative schemes obtained by explicit time discretization of the flows, plus a runner
// that records iterates in the Trajectory format with integer times.
//
// Each step is written as x + d with the same increment d the matching flow field returns,
// so n unit Euler steps of a flow reproduce n steps of the scheme exactly.

#include <functional>
#include <string>
#include <vector>

#include "opsplit/first_order_flows.hpp"
#include "opsplit/flow_engine.hpp"
#include "opsplit/nonconvex_flows.hpp"
#include "opsplit/operator_core.hpp"
#include "opsplit/primal_dual_flows.hpp"

namespace opsplit {

/// x + lambda (T x - x), lambda in [0, 1].
inline Vector km_step(const SingleValuedMap& T, double lambda, const Vector& x) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("KM relaxation must lie in [0, 1]");
  return x + lambda * (T(x) - x);
}

/// x + lambda (J_{gamma A}(x - gamma B x) - x), lambda in [0, delta].
inline Vector fb_step(const MonotoneMap& A, const SingleValuedMap& B, double gamma, double lambda,
                      const Vector& x) {
  const double beta = require_cocoercivity(B);
  require_positive(gamma, "forward-backward step gamma");
  if (!(gamma < 2.0 * beta)) throw ParameterError("forward-backward step gamma must lie in (0, 2 beta)");
  if (!(lambda >= 0.0 && lambda <= fb_delta(beta, gamma)))
    throw ParameterError("forward-backward relaxation must lie in [0, delta]");
  return x + lambda * (A.resolvent(gamma, x - gamma * B(x)) - x);
}

/// y = J_{gamma A}(x - gamma B x); returns y + lambda (B x - B y).
inline Vector tseng_step(const MonotoneMap& A, const SingleValuedMap& B, double gamma, double lambda,
                         const Vector& x) {
  require_positive(gamma, "Tseng step gamma");
  if (!B.lipschitz || !(gamma * *B.lipschitz < 1.0))
    throw ParameterError("Tseng step needs gamma L < 1");
  const Vector Bx = B(x);
  const Vector y = A.resolvent(gamma, x - gamma * Bx);
  return x + ((y - x) + lambda * (Bx - B(y)));
}

/// z + (R_{gamma A} R_{gamma B} z - z)/2.
inline Vector dr_step(const MonotoneMap& A, const MonotoneMap& B, double gamma, const Vector& z) {
  require_positive(gamma, "Douglas-Rachford step gamma");
  const Vector rb = 2.0 * B.resolvent(gamma, z) - z;
  const Vector ra = 2.0 * A.resolvent(gamma, rb) - rb;
  return z + 0.5 * (ra - z);
}

/// J_{gamma A}(x_n - gamma B x_n) - gamma (B x_n - B x_{n-1}), gamma L < 1/2.
inline Vector frb_step(const MonotoneMap& A, const SingleValuedMap& B, double gamma, const Vector& x_curr,
                       const Vector& x_prev) {
  require_positive(gamma, "forward-reflected-backward step gamma");
  if (!B.lipschitz || !(gamma * *B.lipschitz < 0.5))
    throw ParameterError("forward-reflected-backward step needs gamma L < 1/2");
  const Vector Bc = B(x_curr);
  return A.resolvent(gamma, x_curr - gamma * Bc) - gamma * (Bc - B(x_prev));
}

/// (1 - l/(1+g)) x_n + l/(1+g) prox_{eta f}(x_n - eta grad g(x_n)) + l/(1+g) (x_n - x_{n-1})
/// with l = lambda_n, g = gamma_n.
inline Vector inertial_fb_step(const ProxObject& f, const SmoothFunction& g, double eta, double gamma_n,
                               double lambda_n, const Vector& x_curr, const Vector& x_prev) {
  require_positive(eta, "step eta");
  require_positive(gamma_n, "damping gamma_n");
  require_positive(lambda_n, "relaxation lambda_n");
  if (g.convex && !(eta < 2.0 / g.grad_lipschitz))
    throw ParameterError("inertial forward-backward step eta must lie in (0, 2 beta)");
  const double w = lambda_n / (1.0 + gamma_n);
  const Vector p = f.prox(eta, x_curr - eta * g.gradient(x_curr));
  return (1.0 - w) * x_curr + w * p + w * (x_curr - x_prev);
}

/// y = x_n + ((n - 1)/(n + alpha - 1)) (x_n - x_{n-1}); returns y - gamma grad g(y).
inline Vector nesterov_step(const SmoothFunction& g, double gamma, double alpha, long n,
                            const Vector& x_curr, const Vector& x_prev) {
  require_positive(gamma, "gradient step gamma");
  if (gamma > 1.0 / g.grad_lipschitz * (1.0 + 1e-12))
    throw ParameterError("gradient step exceeds 1/L");
  if (n < 1) throw ParameterError("Nesterov counter starts at n = 1");
  const double nn = static_cast<double>(n);
  const Vector y = x_curr + ((nn - 1.0) / (nn + alpha - 1.0)) * (x_curr - x_prev);
  return y - gamma * g.gradient(y);
}

/// prox_{eta f}(x - eta grad g(x)) written as x + (prox - x).
inline Vector proxgrad_step(const NonconvexProblem& p, const Vector& x) {
  return x + (proxgrad_point(p, x) - x);
}

/// One step of the proximal ADMM scheme with metrics M1, M2 and inner tolerance 1e-10:
/// x_{n+1} from the linearized proximal subproblem, z_{n+1} from the relaxed second block,
/// y_{n+1} = y_n + c (A x_{n+1} - z_{n+1}).
inline PDState prox_admm_step(const StructuredProblem& prob, const PDParams& params, const Matrix& M1,
                              const Matrix& M2, const PDState& s, InnerSolverOptions opts = {}) {
  validate(params);
  const PDState d = pd_general_increment(prob, params, M1, M2, s, opts);
  return {s.x + d.x, s.z + d.z, s.y + d.y};
}

/// Runs `steps` iterations of a one-step map, recording every iterate at t = 0, 1, 2, ...
inline Trajectory run_iterations(const std::string& label, const Vector& x0, long steps,
                                 const std::function<Vector(long, const Vector&)>& step,
                                 const std::vector<Probe>& probes = {}) {
  Trajectory traj;
  traj.order = 1;
  traj.dim = x0.size();
  traj.label = label;
  for (const auto& p : probes) traj.probe_names.push_back(p.name);
  Vector x = x0;
  for (long k = 0; k <= steps; ++k) {
    Vector next = k < steps ? step(k, x) : x;
    Vector delta = next - x;
    std::vector<double> row;
    const ProbePoint point{static_cast<double>(k), x, delta, static_cast<std::size_t>(k)};
    for (const auto& p : probes) row.push_back(p.fn(point));
    traj.times.push_back(static_cast<double>(k));
    traj.states.push_back(x);
    traj.velocities.push_back(std::move(delta));
    traj.records.push_back(std::move(row));
    x = std::move(next);
  }
  return traj;
}

/// Two-step schemes (inertial, Nesterov, forward-reflected-backward) from (x_0, x_1).
inline Trajectory run_two_step(const std::string& label, const Vector& x0, const Vector& x1, long steps,
                               const std::function<Vector(long, const Vector&, const Vector&)>& step) {
  Trajectory traj;
  traj.order = 1;
  traj.dim = x0.size();
  traj.label = label;
  Vector prev = x0, curr = x1;
  traj.times = {0.0, 1.0};
  traj.states = {x0, x1};
  traj.velocities = {x1 - x0};
  traj.records = {{}, {}};
  for (long n = 1; n < steps; ++n) {
    Vector next = step(n, curr, prev);
    traj.velocities.push_back(next - curr);
    traj.times.push_back(static_cast<double>(n + 1));
    traj.states.push_back(next);
    traj.records.emplace_back();
    prev = std::move(curr);
    curr = std::move(next);
  }
  traj.velocities.push_back(Vector::Zero(x0.size()));
  return traj;
}

}  // namespace opsplit
