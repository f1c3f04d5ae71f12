#pragma once

// Proximal-gradient flow x' = prox_{eta f}(x - eta grad g(x)) - x for convex f and smooth,
// possibly nonconvex g, with the merit function H(u, v) = (f+g)(u) + |u - v|^2/(2 eta)
// and a Lojasiewicz exponent estimate along converged trajectories.
//
// Here grad_lipschitz of g is read as beta: |grad g(x) - grad g(y)| <= beta |x - y|.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "opsplit/flow_engine.hpp"
#include "opsplit/operator_core.hpp"

namespace opsplit {

struct NonconvexProblem {
  ProxObject f;
  SmoothFunction g;
  double eta = 0.25;

  double beta() const { return g.grad_lipschitz; }
  double objective(const Vector& x) const { return f(x) + g(x); }
};

/// eta beta (3 + eta beta) < 1
inline bool check_eta(double beta, double eta) {
  require_positive(beta, "gradient Lipschitz constant beta");
  require_positive(eta, "step eta");
  const double s = eta * beta;
  return s * (3.0 + s) < 1.0;
}

inline void require_eta(const NonconvexProblem& p) {
  if (!check_eta(p.beta(), p.eta)) {
    const double s = p.eta * p.beta();
    throw HypothesisError("step condition eta*beta*(3 + eta*beta) < 1 fails: value " +
                          std::to_string(s * (3.0 + s)));
  }
}

inline Vector proxgrad_point(const NonconvexProblem& p, const Vector& x) {
  return p.f.prox(p.eta, x - p.eta * p.g.gradient(x));
}

inline FlowField proxgrad_field(const NonconvexProblem& p) {
  require_eta(p);
  const NonconvexProblem prob = p;
  FlowField field;
  field.order = 1;
  field.label = "proxgrad";
  field.first = [prob](double, const Vector& x) -> Vector { return proxgrad_point(prob, x) - x; };
  return field;
}

/// H(u, v); +inf when u is outside dom f.
inline double merit_eval(const NonconvexProblem& p, const Vector& u, const Vector& v) {
  const double fu = p.f(u);
  if (!std::isfinite(fu)) return kInfinity;
  return fu + p.g(u) + (u - v).squaredNorm() / (2.0 * p.eta);
}

/// |z| with z = (grad g(x' + x) - grad g(x), -x'/eta), an element of the limiting
/// subdifferential of H at (x' + x, x).
inline double merit_subgradient_norm(const NonconvexProblem& p, const Vector& x, const Vector& xdot) {
  const Vector first = p.g.gradient(xdot + x) - p.g.gradient(x);
  return std::sqrt(first.squaredNorm() + xdot.squaredNorm() / (p.eta * p.eta));
}

/// |prox_{eta f}(x - eta grad g(x)) - x| / eta; vanishes exactly on critical points.
inline double critical_residual(const NonconvexProblem& p, const Vector& x) {
  return (proxgrad_point(p, x) - x).norm() / p.eta;
}

/// Probes merit_H, merit_subgrad, crit_residual, speed, arclength. The arclength probe
/// accumulates the trapezoid integral of |x'| and must be created afresh per run.
inline std::vector<Probe> nonconvex_probes(const NonconvexProblem& p) {
  struct Arc {
    bool started = false;
    double t = 0.0, speed = 0.0, total = 0.0;
  };
  auto arc = std::make_shared<Arc>();
  return {
      {"merit_H", [p](const ProbePoint& q) { return merit_eval(p, q.x + q.v, q.x); }},
      {"merit_subgrad", [p](const ProbePoint& q) { return merit_subgradient_norm(p, q.x, q.v); }},
      {"crit_residual", [p](const ProbePoint& q) { return critical_residual(p, q.x); }},
      {"speed", [](const ProbePoint& q) { return q.v.norm(); }},
      {"arclength",
       [arc](const ProbePoint& q) {
         const double s = q.v.norm();
         if (arc->started) arc->total += 0.5 * (q.t - arc->t) * (s + arc->speed);
         arc->started = true;
         arc->t = q.t;
         arc->speed = s;
         return arc->total;
       }},
  };
}

struct KLFitReport {
  double exponent = 0.0;  // theta with |z| ~ c (H - H_inf)^theta
  double window_t0 = 0.0;
  double window_t1 = 0.0;
  double r2 = 0.0;
  double limit_value = 0.0;
  std::size_t points = 0;
};

/// Least-squares slope of log|z| against log(H - H_inf) over the points with
/// H - H_inf in [lo, hi]. Without `limit_value` the last H of the series is used.
inline KLFitReport lojasiewicz_fit(const std::vector<double>& times, const std::vector<double>& merit,
                                   const std::vector<double>& subgrad,
                                   std::optional<double> limit_value = std::nullopt,
                                   double lo = 1e-10, double hi = 1e-2) {
  if (times.size() != merit.size() || merit.size() != subgrad.size() || merit.empty())
    throw FitError("lojasiewicz_fit: series lengths differ or are empty");
  KLFitReport r;
  r.limit_value = limit_value ? *limit_value : merit.back();
  std::vector<double> X, Y;
  double t0 = kInfinity, t1 = -kInfinity;
  for (std::size_t k = 0; k < merit.size(); ++k) {
    const double gap = merit[k] - r.limit_value;
    if (gap >= lo && gap <= hi && subgrad[k] > 0.0 && std::isfinite(subgrad[k])) {
      X.push_back(std::log(gap));
      Y.push_back(std::log(subgrad[k]));
      t0 = std::min(t0, times[k]);
      t1 = std::max(t1, times[k]);
    }
  }
  r.points = X.size();
  if (X.size() < 10)
    throw FitError("lojasiewicz_fit: only " + std::to_string(X.size()) + " points in the fit window");
  const auto n = static_cast<double>(X.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < X.size(); ++k) {
    mx += X[k];
    my += Y[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < X.size(); ++k) {
    sxx += (X[k] - mx) * (X[k] - mx);
    sxy += (X[k] - mx) * (Y[k] - my);
    syy += (Y[k] - my) * (Y[k] - my);
  }
  if (!(sxx > 0.0)) throw FitError("lojasiewicz_fit: degenerate fit window");
  r.exponent = sxy / sxx;
  r.r2 = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  r.window_t0 = t0;
  r.window_t1 = t1;
  return r;
}

inline KLFitReport lojasiewicz_fit(const Trajectory& traj, const NonconvexProblem& p,
                                   double lo = 1e-10, double hi = 1e-2) {
  if (critical_residual(p, traj.final_state()) >= 1e-4)
    throw FitError("lojasiewicz_fit: trajectory tail has not converged");
  std::vector<double> merit, subgrad;
  merit.reserve(traj.size());
  subgrad.reserve(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    merit.push_back(merit_eval(p, traj.states[k] + traj.velocities[k], traj.states[k]));
    subgrad.push_back(merit_subgradient_norm(p, traj.states[k], traj.velocities[k]));
  }
  return lojasiewicz_fit(traj.times, merit, subgrad, std::nullopt, lo, hi);
}

}  // namespace opsplit
