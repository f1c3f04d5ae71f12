#pragma once

// Damped second-order flows x'' + gamma(t) x' + lambda(t) B(x) = 0 and the vanishing
// damping variants, together with the (A1) parameter check and the Lyapunov functional
// that drives their convergence analysis.

#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "opsplit/first_order_flows.hpp"
#include "opsplit/flow_engine.hpp"
#include "opsplit/operator_core.hpp"

namespace opsplit {

enum class ThresholdKind { cocoercive, nonexpansive, averaged, fb, opt_relaxed };

/// gamma'(t) <= 0 <= lambda'(t) and gamma^2/lambda >= K (1 + theta), K set by `kind`:
/// cocoercive 1/beta, nonexpansive 2, averaged 2 alpha, fb 2/delta, opt_relaxed eta/beta + 1
/// (the last with the strict inequality gamma^2 > K and theta unused).
struct A1Spec {
  Schedule gamma;
  Schedule lambda;
  double theta = 0.1;
  ThresholdKind kind = ThresholdKind::cocoercive;
  double parameter = 1.0;  // beta, alpha or delta depending on kind
  double eta = 0.0;        // opt_relaxed only: step eta, `parameter` is beta

  double threshold() const {
    switch (kind) {
      case ThresholdKind::cocoercive: return 1.0 / parameter;
      case ThresholdKind::nonexpansive: return 2.0;
      case ThresholdKind::averaged: return 2.0 * parameter;
      case ThresholdKind::fb: return 2.0 / parameter;
      case ThresholdKind::opt_relaxed: return eta / parameter + 1.0;
    }
    return kInfinity;
  }

  /// Cocoercivity constant entering the Lyapunov functional, 1/K.
  double effective_beta() const { return 1.0 / threshold(); }
};

struct A1Report {
  bool pass = true;
  bool gamma_nonincreasing = true;
  bool lambda_nondecreasing = true;
  bool ratio_ok = true;
  bool positive = true;
  std::optional<double> first_violation_t;
  double min_ratio = kInfinity;  // min gamma^2/lambda over the grid
  double lambda_lo = kInfinity, lambda_hi = -kInfinity;
  double gamma_lo = kInfinity, gamma_hi = -kInfinity;
};

inline A1Report check_a1(const A1Spec& spec, const std::vector<double>& grid) {
  A1Report r;
  const double K = spec.threshold();
  const double needed = spec.kind == ThresholdKind::opt_relaxed ? K : K * (1.0 + spec.theta);
  auto violate = [&](double t) {
    r.pass = false;
    if (!r.first_violation_t) r.first_violation_t = t;
  };
  for (double t : grid) {
    const double g = spec.gamma(t), l = spec.lambda(t);
    r.gamma_lo = std::min(r.gamma_lo, g);
    r.gamma_hi = std::max(r.gamma_hi, g);
    r.lambda_lo = std::min(r.lambda_lo, l);
    r.lambda_hi = std::max(r.lambda_hi, l);
    if (!(g > 0.0 && l > 0.0)) {
      r.positive = false;
      violate(t);
      continue;
    }
    if (spec.gamma.dot(t) > 0.0) {
      r.gamma_nonincreasing = false;
      violate(t);
    }
    if (spec.lambda.dot(t) < 0.0) {
      r.lambda_nondecreasing = false;
      violate(t);
    }
    const double ratio = g * g / l;
    r.min_ratio = std::min(r.min_ratio, ratio);
    const bool ok = spec.kind == ThresholdKind::opt_relaxed ? ratio > needed : ratio >= needed;
    if (!ok) {
      r.ratio_ok = false;
      violate(t);
    }
  }
  return r;
}

inline std::vector<double> uniform_grid(double t0, double t1, int samples) {
  std::vector<double> grid(static_cast<std::size_t>(samples));
  for (int k = 0; k < samples; ++k) grid[static_cast<std::size_t>(k)] = t0 + (t1 - t0) * k / std::max(samples - 1, 1);
  return grid;
}

struct CocoerciveVariant {
  SingleValuedMap B;
};
struct NonexpansiveVariant {
  SingleValuedMap T;
};
struct FBVariant {
  MonotoneMap A;
  SingleValuedMap B;
  double eta = 1.0;
};
struct AVDVariant {
  SmoothFunction g;
  double alpha = 3.0;
};
struct YosidaVariant {
  MonotoneMap A;
  Schedule lambda;
  double alpha = 3.0;
};

using SecondOrderVariant =
    std::variant<CocoerciveVariant, NonexpansiveVariant, FBVariant, AVDVariant, YosidaVariant>;

struct SecondOrderSpec {
  SecondOrderVariant variant;
  std::optional<A1Spec> a1;  // required for the first three variants
  ProbeGrid grid{};
};

namespace detail {
inline void require_positive_time(double t) {
  if (!(t > 0.0)) throw DomainError("vanishing damping alpha/t evaluated at t <= 0");
}
}  // namespace detail

/// The operator whose zeros the damped flows approach: B, Id - T, or Id - J_{eta A}(Id - eta B).
inline std::function<Vector(const Vector&)> second_order_operator(const SecondOrderSpec& spec) {
  if (const auto* c = std::get_if<CocoerciveVariant>(&spec.variant)) return c->B.eval;
  if (const auto* n = std::get_if<NonexpansiveVariant>(&spec.variant)) {
    const auto T = n->T.eval;
    return [T](const Vector& x) -> Vector { return x - T(x); };
  }
  if (const auto* f = std::get_if<FBVariant>(&spec.variant)) {
    const auto J = f->A.resolvent;
    const auto B = f->B.eval;
    const double eta = f->eta;
    return [=](const Vector& x) -> Vector { return x - J(eta, x - eta * B(x)); };
  }
  if (const auto* a = std::get_if<AVDVariant>(&spec.variant)) return a->g.gradient;
  throw ParameterError("the Yosida variant has a time-dependent operator");
}

inline FlowField second_order_field(const SecondOrderSpec& spec) {
  FlowField field;
  field.order = 2;

  if (const auto* avd = std::get_if<AVDVariant>(&spec.variant)) {
    require_positive(avd->alpha, "vanishing damping alpha");
    const auto grad = avd->g.gradient;
    const double alpha = avd->alpha;
    field.label = "avd";
    field.second = [=](double t, const Vector& x, const Vector& v) -> Vector {
      detail::require_positive_time(t);
      return -(alpha / t) * v - grad(x);
    };
    return field;
  }
  if (const auto* yos = std::get_if<YosidaVariant>(&spec.variant)) {
    require_positive(yos->alpha, "vanishing damping alpha");
    const auto J = yos->A.resolvent;
    const auto lambda = yos->lambda.eval;
    const double alpha = yos->alpha;
    field.label = "avd_yosida";
    field.breakpoints = yos->lambda.breakpoints;
    field.second = [=](double t, const Vector& x, const Vector& v) -> Vector {
      detail::require_positive_time(t);
      const double l = lambda(t);
      if (!(l > 0.0)) throw HypothesisError("Yosida parameter must stay positive");
      return -(alpha / t) * v - (x - J(l, x)) / l;
    };
    return field;
  }

  if (!spec.a1) throw HypothesisError("damped second-order flow needs an (A1) specification");
  const A1Spec& a1 = *spec.a1;
  if (const auto* fbv = std::get_if<FBVariant>(&spec.variant)) {
    const double beta = require_cocoercivity(fbv->B);
    require_positive(fbv->eta, "forward-backward step eta");
    if (a1.kind != ThresholdKind::opt_relaxed && !(fbv->eta < 2.0 * beta))
      throw HypothesisError("forward-backward step eta must lie in (0, 2 beta)");
  }
  const A1Report report = check_a1(a1, uniform_grid(spec.grid.t0, spec.grid.t1, spec.grid.samples));
  if (!report.pass)
    throw HypothesisError("(A1) fails at t=" + std::to_string(*report.first_violation_t) +
                          " (min gamma^2/lambda = " + std::to_string(report.min_ratio) + ")");

  const auto B = second_order_operator(spec);
  const auto gamma = a1.gamma.eval;
  const auto lambda = a1.lambda.eval;
  field.label = std::holds_alternative<CocoerciveVariant>(spec.variant)    ? "second_order"
                : std::holds_alternative<NonexpansiveVariant>(spec.variant) ? "second_order_nonexpansive"
                                                                            : "second_order_fb";
  field.breakpoints = a1.gamma.breakpoints;
  field.breakpoints.insert(field.breakpoints.end(), a1.lambda.breakpoints.begin(),
                           a1.lambda.breakpoints.end());
  field.second = [=](double t, const Vector& x, const Vector& v) -> Vector {
    return -gamma(t) * v - lambda(t) * B(x);
  };
  return field;
}

/// V = <x - x*, x'> + gamma |x - x*|^2 / 2 + beta (gamma/lambda) |x'|^2, beta = 1/K.
inline double lyapunov_value(const A1Spec& a1, double t, const Vector& x, const Vector& v,
                             const Vector& xstar) {
  const Vector d = x - xstar;
  const double g = a1.gamma(t);
  return d.dot(v) + 0.5 * g * d.squaredNorm() + a1.effective_beta() * (g / a1.lambda(t)) * v.squaredNorm();
}

inline std::vector<double> second_order_lyapunov(const Trajectory& traj, const SecondOrderSpec& spec,
                                                 const Vector& xstar) {
  if (!spec.a1) throw HypothesisError("Lyapunov functional needs an (A1) specification");
  std::vector<double> out;
  out.reserve(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k)
    out.push_back(lyapunov_value(*spec.a1, traj.times[k], traj.states[k], traj.velocities[k], xstar));
  return out;
}

/// Probes lyapunov_V, h, hdot, speed, accel and (avd) objective.
inline std::vector<Probe> second_order_probes(const SecondOrderSpec& spec, const FlowField& field,
                                              const std::optional<Vector>& xstar) {
  std::vector<Probe> probes;
  if (xstar) {
    const Vector ref = *xstar;
    if (spec.a1) {
      const A1Spec a1 = *spec.a1;
      probes.push_back({"lyapunov_V", [a1, ref](const ProbePoint& p) {
                          return lyapunov_value(a1, p.t, p.x, p.v, ref);
                        }});
    }
    probes.push_back({"h", [ref](const ProbePoint& p) { return 0.5 * (p.x - ref).squaredNorm(); }});
    probes.push_back({"hdot", [ref](const ProbePoint& p) { return (p.x - ref).dot(p.v); }});
  }
  probes.push_back({"speed", [](const ProbePoint& p) { return p.v.norm(); }});
  const auto second = field.second;
  probes.push_back({"accel", [second](const ProbePoint& p) { return second(p.t, p.x, p.v).norm(); }});
  if (const auto* avd = std::get_if<AVDVariant>(&spec.variant)) {
    const auto g = avd->g.value;
    probes.push_back({"objective", [g](const ProbePoint& p) { return g(p.x); }});
  }
  return probes;
}

}  // namespace opsplit
