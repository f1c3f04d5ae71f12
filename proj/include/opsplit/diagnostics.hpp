#pragma once

// Trajectory diagnostics: monotonicity checks, energy functionals, the continuous ISTA
// certificate, rate fits and the fixed-point residual rate inequality.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "opsplit/flow_engine.hpp"
#include "opsplit/nonconvex_flows.hpp"
#include "opsplit/operator_core.hpp"

namespace opsplit {

/// Outcome of a check. `margin` is the smallest slack observed (negative on failure).
struct CheckReport {
  std::string check;
  bool pass = true;
  std::optional<double> first_violation_t;
  double margin = kInfinity;

  void observe(double t, double m) {
    margin = std::min(margin, m);
    if (m < 0.0) {
      if (pass) first_violation_t = t;
      pass = false;
    }
  }
};

inline void to_json(nlohmann::json& j, const CheckReport& r) {
  j = nlohmann::json{{"check", r.check}, {"pass", r.pass}};
  j["first_violation_t"] = r.first_violation_t ? nlohmann::json(*r.first_violation_t) : nlohmann::json(nullptr);
  j["margin"] = std::isfinite(r.margin) ? nlohmann::json(r.margin) : nlohmann::json(nullptr);
}

struct MonotoneSlack {
  double absolute = 1e-9;
  double relative = 1e-12;
};

/// values[k] <= values[k-1] + absolute + relative |values[k-1]|.
inline CheckReport nonincreasing_check(const std::string& name, const std::vector<double>& times,
                                       const std::vector<double>& values, MonotoneSlack slack = {}) {
  if (times.size() != values.size()) throw ParameterError("nonincreasing_check: length mismatch");
  CheckReport r{name};
  for (std::size_t k = 1; k < values.size(); ++k) {
    const double allowed = slack.absolute + slack.relative * std::abs(values[k - 1]);
    r.observe(times[k], allowed - (values[k] - values[k - 1]));
  }
  return r;
}

/// t -> |x(t) - ref| nonincreasing.
inline CheckReport fejer_check(const Trajectory& traj, const Vector& ref, MonotoneSlack slack = {}) {
  std::vector<double> dist;
  dist.reserve(traj.size());
  for (const auto& x : traj.states) dist.push_back((x - ref).norm());
  auto r = nonincreasing_check("fejer", traj.times, dist, slack);
  return r;
}

/// t -> |T x(t) - x(t)| nonincreasing.
inline CheckReport residual_monotonicity_check(const Trajectory& traj,
                                               const std::function<Vector(const Vector&)>& T,
                                               MonotoneSlack slack = {}) {
  std::vector<double> res;
  res.reserve(traj.size());
  for (const auto& x : traj.states) res.push_back((T(x) - x).norm());
  return nonincreasing_check("residual_monotone", traj.times, res, slack);
}

/// |x - x*|^2/(2 gamma) + g(x) - g(x*) - <grad g(x*), x - x*>.
inline double energy_E(const Vector& x, const SmoothFunction& g, double gamma, const Vector& xstar) {
  require_positive(gamma, "gamma");
  const Vector d = x - xstar;
  return d.squaredNorm() / (2.0 * gamma) + g(x) - g(xstar) - g.gradient(xstar).dot(d);
}

/// gamma L (3 + gamma L) <= 1, L the Lipschitz constant of grad g.
inline bool cont_ista_condition(double gamma, double grad_lipschitz) {
  const double s = gamma * grad_lipschitz;
  return s * (3.0 + s) <= 1.0;
}

/// Checks 0 <= gap(T) <= R / T (1 + tol) at every T > 0 and gap nonincreasing, where
/// R = |x0 - x*|^2 / (2 gamma). Times are measured from the first entry.
inline std::vector<CheckReport> cont_ista_certificate(const std::vector<double>& times,
                                                      const std::vector<double>& gaps, double R,
                                                      double tol = 1e-6) {
  if (times.size() != gaps.size() || times.empty()) throw ParameterError("cont_ista: bad series");
  CheckReport bound{"cont_ista_bound"};
  CheckReport lower{"cont_ista_nonnegative"};
  for (std::size_t k = 0; k < times.size(); ++k) {
    lower.observe(times[k], gaps[k] + 1e-12);
    const double T = times[k] - times.front();
    if (T > 0.0) bound.observe(times[k], R / T * (1.0 + tol) - gaps[k]);
  }
  return {lower, bound, nonincreasing_check("cont_ista_gap_nonincreasing", times, gaps)};
}

/// gap(T) = (f+g)(x'(T) + x(T)) - (f+g)(x*) + |x'(T)|^2/(2 gamma) along a forward-backward
/// trajectory with lambda = 1 and step gamma.
inline std::vector<double> cont_ista_gap_series(const Trajectory& traj, const ProxObject& f,
                                                const SmoothFunction& g, double gamma, const Vector& xstar) {
  const double opt = f(xstar) + g(xstar);
  std::vector<double> gaps;
  gaps.reserve(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Vector u = traj.velocities[k] + traj.states[k];
    gaps.push_back(f(u) + g(u) - opt + traj.velocities[k].squaredNorm() / (2.0 * gamma));
  }
  return gaps;
}

inline std::vector<CheckReport> cont_ista_certificate(const Trajectory& traj, const ProxObject& f,
                                                      const SmoothFunction& g, double gamma,
                                                      const Vector& xstar, double tol = 1e-6) {
  if (!cont_ista_condition(gamma, g.grad_lipschitz))
    throw HypothesisError("continuous ISTA certificate needs gamma L (3 + gamma L) <= 1");
  const double R = (traj.states.front() - xstar).squaredNorm() / (2.0 * gamma);
  return cont_ista_certificate(traj.times, cont_ista_gap_series(traj, f, g, gamma, xstar), R, tol);
}

enum class RateModel { power, exponential };

/// power: value ~ c t^{-rate}; exponential: value ~ c exp(-rate t).
struct RateFit {
  RateModel model = RateModel::power;
  double c = 0.0;
  double rate = 0.0;
  double t0 = 0.0, t1 = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

/// Least squares on log(value) against log(t) (power) or t (exponential) over [t0, t1].
inline RateFit rate_fit(const std::vector<double>& times, const std::vector<double>& values, RateModel model,
                        double t0 = -kInfinity, double t1 = kInfinity) {
  if (times.size() != values.size()) throw FitError("rate_fit: length mismatch");
  std::vector<double> X, Y;
  RateFit fit;
  fit.model = model;
  fit.t0 = kInfinity;
  fit.t1 = -kInfinity;
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (times[k] < t0 || times[k] > t1) continue;
    if (!(values[k] > 0.0)) throw FitError("rate_fit: nonpositive value at t=" + std::to_string(times[k]));
    if (model == RateModel::power && !(times[k] > 0.0)) throw FitError("rate_fit: power model needs t > 0");
    X.push_back(model == RateModel::power ? std::log(times[k]) : times[k]);
    Y.push_back(std::log(values[k]));
    fit.t0 = std::min(fit.t0, times[k]);
    fit.t1 = std::max(fit.t1, times[k]);
  }
  fit.points = X.size();
  if (X.size() < 10) throw FitError("rate_fit: fewer than 10 points in the window");
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
  if (!(sxx > 0.0)) throw FitError("rate_fit: degenerate abscissae");
  const double slope = sxy / sxx;
  fit.rate = -slope;
  fit.c = std::exp(my - slope * mx);
  fit.r2 = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  return fit;
}

/// Mean period of an oscillating signal from the spacing of its sign changes in [t0, t1].
inline double estimate_period(const std::vector<double>& times, const std::vector<double>& signal,
                              double t0 = -kInfinity, double t1 = kInfinity) {
  std::vector<double> crossings;
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (times[k - 1] < t0 || times[k] > t1) continue;
    if ((signal[k - 1] < 0.0) != (signal[k] < 0.0)) {
      const double w = signal[k - 1] / (signal[k - 1] - signal[k]);
      crossings.push_back(times[k - 1] + w * (times[k] - times[k - 1]));
    }
  }
  if (crossings.size() < 3) throw FitError("estimate_period: fewer than three sign changes");
  return 2.0 * (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1);
}

/// Power-law fit of the upper envelope: maxima over consecutive windows of width `window`
/// covering [t0, t1], fitted against the times at which they occur.
inline RateFit envelope_fit(const std::vector<double>& times, const std::vector<double>& values, double window,
                            double t0, double t1) {
  require_positive(window, "envelope window");
  std::vector<double> peak_t, peak_v;
  std::size_t k = 0;
  while (k < times.size() && times[k] < t0) ++k;
  for (double start = t0; start + window <= t1 + 1e-12; start += window) {
    double best = -kInfinity, best_t = start;
    while (k < times.size() && times[k] < start + window) {
      if (values[k] > best) {
        best = values[k];
        best_t = times[k];
      }
      ++k;
    }
    if (std::isfinite(best)) {
      peak_t.push_back(best_t);
      peak_v.push_back(best);
    }
  }
  RateFit fit = rate_fit(peak_t, peak_v, RateModel::power);
  fit.t0 = t0;
  fit.t1 = t1;
  return fit;
}

/// t |T x(t) - x(t)|^2 <= (2/tau) int_{t/2}^t lambda (1 - lambda) |T x - x|^2 ds at every grid
/// t >= 2 dt, tau = inf lambda (1 - lambda), trapezoid quadrature with linear interpolation
/// at t/2, slack 1e-6 (1 + rhs). Times are absolute (the flow starts at t = 0).
inline CheckReport rate2_inequality_check(const std::vector<double>& times, const std::vector<double>& residual,
                                          const Schedule& lambda) {
  if (times.size() != residual.size() || times.size() < 3) throw ParameterError("rate2: bad series");
  double lam_lo = kInfinity, lam_hi = -kInfinity, tau = kInfinity;
  std::vector<double> integrand(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double l = lambda(times[k]);
    lam_lo = std::min(lam_lo, l);
    lam_hi = std::max(lam_hi, l);
    tau = std::min(tau, l * (1.0 - l));
    integrand[k] = l * (1.0 - l) * residual[k] * residual[k];
  }
  if (!(lam_lo > 0.0 && lam_hi < 1.0))
    throw HypothesisError("rate inequality needs 0 < inf lambda <= sup lambda < 1");
  std::vector<double> cumulative(times.size(), 0.0);
  for (std::size_t k = 1; k < times.size(); ++k)
    cumulative[k] = cumulative[k - 1] + 0.5 * (times[k] - times[k - 1]) * (integrand[k] + integrand[k - 1]);
  auto cumulative_at = [&](double s) {
    const auto it = std::upper_bound(times.begin(), times.end(), s);
    if (it == times.begin()) return 0.0;
    const auto j = static_cast<std::size_t>(it - times.begin());
    if (j >= times.size()) return cumulative.back();
    const double w = (s - times[j - 1]) / (times[j] - times[j - 1]);
    const double value_at_s = integrand[j - 1] + w * (integrand[j] - integrand[j - 1]);
    return cumulative[j - 1] + 0.5 * (s - times[j - 1]) * (integrand[j - 1] + value_at_s);
  };
  CheckReport r{"rate2_inequality"};
  const double dt = times[1] - times[0];
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double t = times[k];
    if (t < 2.0 * dt - 1e-12) continue;
    const double rhs = (2.0 / tau) * (cumulative[k] - cumulative_at(0.5 * t));
    const double lhs = t * residual[k] * residual[k];
    r.observe(t, rhs + 1e-6 * (1.0 + rhs) - lhs);
  }
  return r;
}

inline CheckReport rate2_inequality_check(const Trajectory& traj, const std::function<Vector(const Vector&)>& T,
                                          const Schedule& lambda) {
  std::vector<double> res;
  res.reserve(traj.size());
  for (const auto& x : traj.states) res.push_back((T(x) - x).norm());
  return rate2_inequality_check(traj.times, res, lambda);
}

/// Share of the trapezoid integral of `values` over [t_split, t_end] in the whole integral.
inline double tail_fraction(const std::vector<double>& times, const std::vector<double>& values, double t_split) {
  double total = 0.0, tail = 0.0;
  for (std::size_t k = 1; k < times.size(); ++k) {
    const double piece = 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]);
    total += piece;
    if (times[k - 1] >= t_split) tail += piece;
  }
  if (!(total > 0.0)) return 0.0;
  return tail / total;
}

// ---------------------------------------------------------------------------
// Nonconvex flow checks

/// D(t) = H(x' + x, x) decreases between records by at least
/// (1/eta - (3 + eta beta) beta) int |x'|^2 dt, up to 1e-8 per step.
inline CheckReport merit_descent_check(const Trajectory& traj, const NonconvexProblem& p, double slack = 1e-8) {
  const double rate = 1.0 / p.eta - (3.0 + p.eta * p.beta()) * p.beta();
  CheckReport r{"merit_descent"};
  double prev = merit_eval(p, traj.states[0] + traj.velocities[0], traj.states[0]);
  double prev_speed2 = traj.velocities[0].squaredNorm();
  for (std::size_t k = 1; k < traj.size(); ++k) {
    const double D = merit_eval(p, traj.states[k] + traj.velocities[k], traj.states[k]);
    const double speed2 = traj.velocities[k].squaredNorm();
    const double required = rate * 0.5 * (traj.times[k] - traj.times[k - 1]) * (speed2 + prev_speed2);
    r.observe(traj.times[k], (prev - D) - required + slack);
    prev = D;
    prev_speed2 = speed2;
  }
  return r;
}

/// |z(t)| <= (beta + 1/eta) |x'(t)| + 1e-10 at every record.
inline CheckReport subgradient_bound_check(const Trajectory& traj, const NonconvexProblem& p, double slack = 1e-10) {
  CheckReport r{"merit_subgradient_bound"};
  const double factor = p.beta() + 1.0 / p.eta;
  for (std::size_t k = 0; k < traj.size(); ++k)
    r.observe(traj.times[k], factor * traj.velocities[k].norm() + slack -
                                 merit_subgradient_norm(p, traj.states[k], traj.velocities[k]));
  return r;
}

/// Fraction of the length int |x'| accumulated over the second half of the horizon.
inline double arclength_tail_fraction(const Trajectory& traj) {
  std::vector<double> speed;
  speed.reserve(traj.size());
  for (const auto& v : traj.velocities) speed.push_back(v.norm());
  return tail_fraction(traj.times, speed, 0.5 * (traj.times.front() + traj.times.back()));
}

}  // namespace opsplit
