#pragma once

// Time-varying parameters, flow fields, and the fixed-step integrator that turns a field
// into a recorded trajectory.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "opsplit/errors.hpp"
#include "opsplit/operator_core.hpp"

namespace opsplit {

enum class Monotone { nonincreasing, nondecreasing, none };

/// Scalar time-dependent parameter such as lambda(t), gamma(t), eps(t) or tau(t).
/// Piecewise C^1; the kinks are listed in `breakpoints`.
struct Schedule {
  std::string label;
  std::function<double(double)> eval;
  std::function<double(double)> derivative;
  Monotone monotone = Monotone::none;
  std::optional<std::pair<double, double>> bounds;
  std::vector<double> breakpoints;

  double operator()(double t) const { return eval(t); }
  double dot(double t) const { return derivative(t); }
};

namespace schedules {

inline Schedule constant(double c) {
  if (!std::isfinite(c)) throw ParameterError("constant schedule: non-finite value");
  return {"constant(" + std::to_string(c) + ")", [c](double) { return c; },
          [](double) { return 0.0; }, Monotone::nonincreasing, std::make_pair(c, c), {}};
}

/// clamp(a + b t, lo, hi)
inline Schedule affine_clamped(double a, double b, double lo, double hi) {
  if (!(lo <= hi)) throw ParameterError("affine_clamped: lo > hi");
  std::vector<double> kinks;
  if (b != 0.0) {
    for (double edge : {lo, hi}) {
      const double t = (edge - a) / b;
      if (std::isfinite(t) && t > 0.0) kinks.push_back(t);
    }
    std::sort(kinks.begin(), kinks.end());
  }
  const Monotone tag = b > 0.0 ? Monotone::nondecreasing
                               : (b < 0.0 ? Monotone::nonincreasing : Monotone::nondecreasing);
  return {"affine_clamped",
          [=](double t) { return std::clamp(a + b * t, lo, hi); },
          [=](double t) {
            const double raw = a + b * t;
            return (raw > lo && raw < hi) ? b : 0.0;
          },
          tag, std::make_pair(lo, hi), kinks};
}

/// c / (1 + t)^p
inline Schedule inverse_power(double c, double p) {
  if (p < 0.0) throw ParameterError("inverse_power: exponent must be nonnegative");
  return {"inverse_power",
          [=](double t) { return c / std::pow(1.0 + t, p); },
          [=](double t) { return -p * c / std::pow(1.0 + t, p + 1.0); },
          c >= 0.0 ? Monotone::nonincreasing : Monotone::nondecreasing, std::nullopt, {}};
}

/// alpha / t, defined for t > 0 only.
inline Schedule alpha_over_t(double alpha) {
  require_positive(alpha, "alpha");
  return {"alpha_over_t",
          [alpha](double t) {
            if (!(t > 0.0)) throw DomainError("alpha/t evaluated at t <= 0");
            return alpha / t;
          },
          [alpha](double t) {
            if (!(t > 0.0)) throw DomainError("alpha/t evaluated at t <= 0");
            return -alpha / (t * t);
          },
          Monotone::nonincreasing, std::nullopt, {}};
}

/// a + b exp(-c t) with c >= 0.
inline Schedule exp_relax(double a, double b, double c) {
  if (c < 0.0) throw ParameterError("exp_relax: rate must be nonnegative");
  Monotone tag = Monotone::none;
  if (b * c >= 0.0) tag = Monotone::nonincreasing;
  if (b * c <= 0.0) tag = b * c == 0.0 ? Monotone::nonincreasing : Monotone::nondecreasing;
  const double lo = std::min(a, a + b), hi = std::max(a, a + b);
  return {"exp_relax",
          [=](double t) { return a + b * std::exp(-c * t); },
          [=](double t) { return -b * c * std::exp(-c * t); },
          tag, std::make_pair(lo, hi), {}};
}

}  // namespace schedules

struct ScheduleCheck {
  bool pass = true;
  std::string message;
};

/// Checks the derivative against central differences (1e-6 relative), the monotone tag and
/// the declared bounds on `samples` uniform points of [t0, t1]. Points within 1e-4 of a
/// breakpoint are skipped for the derivative test.
inline ScheduleCheck verify_schedule(const Schedule& s, double t0, double t1, int samples = 1001) {
  ScheduleCheck out;
  auto fail = [&](const std::string& m) {
    if (out.pass) out.message = s.label + ": " + m;
    out.pass = false;
  };
  const double h = 1e-5;
  double previous = 0.0;
  for (int k = 0; k < samples; ++k) {
    const double t = t0 + (t1 - t0) * k / std::max(samples - 1, 1);
    const double value = s(t);
    if (s.bounds && (value < s.bounds->first - 1e-12 || value > s.bounds->second + 1e-12))
      fail("value " + std::to_string(value) + " outside declared bounds at t=" + std::to_string(t));
    const bool near_kink = std::any_of(s.breakpoints.begin(), s.breakpoints.end(),
                                       [t](double b) { return std::abs(t - b) < 1e-4; });
    if (!near_kink && t - h >= t0) {
      const double fd = (s(t + h) - s(t - h)) / (2.0 * h);
      const double d = s.dot(t);
      if (std::abs(fd - d) > 1e-6 * (1.0 + std::abs(d)))
        fail("derivative mismatch at t=" + std::to_string(t));
    }
    if (k > 0) {
      if (s.monotone == Monotone::nonincreasing && value > previous + 1e-12)
        fail("not nonincreasing at t=" + std::to_string(t));
      if (s.monotone == Monotone::nondecreasing && value < previous - 1e-12)
        fail("not nondecreasing at t=" + std::to_string(t));
    }
    previous = value;
  }
  return out;
}

/// Checks lo <= s(t) <= hi on a uniform grid; throws HypothesisError naming `what`.
inline void require_schedule_within(const Schedule& s, double lo, double hi, const std::string& what,
                                    double t0 = 0.0, double t1 = 100.0, int samples = 2001) {
  for (int k = 0; k < samples; ++k) {
    const double t = t0 + (t1 - t0) * k / (samples - 1);
    const double v = s(t);
    if (!(v >= lo && v <= hi))
      throw HypothesisError(what + " = " + std::to_string(v) + " at t=" + std::to_string(t) +
                            " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

/// Relaxation conditions of the form int lambda (hi - lambda) dt = inf cannot be checked on a
/// finite horizon. The sufficient condition inf min(lambda, hi - lambda) > 0 is tested on the
/// grid; when it fails a warning is returned instead of an error.
inline std::optional<std::string> relaxation_integral_warning(const Schedule& s, double hi, const std::string& what,
                                                              double t0 = 0.0, double t1 = 100.0, int samples = 2001) {
  double inf = kInfinity;
  for (int k = 0; k < samples; ++k) {
    const double v = s(t0 + (t1 - t0) * k / (samples - 1));
    inf = std::min(inf, std::min(v, hi - v));
  }
  if (inf > 1e-12) return std::nullopt;
  return what + ": inf min(lambda, " + std::to_string(hi) +
         " - lambda) is 0 on the grid; the integral condition is assumed, not verified";
}

/// x' = first(t, x) for order 1, x'' = second(t, x, x') for order 2.
struct FlowField {
  int order = 1;
  Eigen::Index dim = 0;
  std::string label;
  std::function<Vector(double, const Vector&)> first;
  std::function<Vector(double, const Vector&, const Vector&)> second;
  std::vector<double> breakpoints;
  std::vector<std::string> warnings;  // hypotheses that cannot be settled on a finite grid

  Vector operator()(double t, const Vector& x) const { return first(t, x); }
  Vector operator()(double t, const Vector& x, const Vector& v) const { return second(t, x, v); }
};

struct ProbePoint {
  double t;
  const Vector& x;
  const Vector& v;
  std::size_t index;
};

/// Named scalar diagnostic evaluated at every recorded point, in time order.
struct Probe {
  std::string name;
  std::function<double(const ProbePoint&)> fn;
};

struct Trajectory {
  int order = 1;
  Eigen::Index dim = 0;
  std::string label;
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> velocities;
  std::vector<std::string> probe_names;
  std::vector<std::vector<double>> records;  // records[k][j] is probe j at times[k]

  std::size_t size() const { return times.size(); }
  const Vector& final_state() const { return states.back(); }
  const Vector& final_velocity() const { return velocities.back(); }

  bool has_series(const std::string& name) const {
    return std::find(probe_names.begin(), probe_names.end(), name) != probe_names.end();
  }

  std::vector<double> series(const std::string& name) const {
    const auto it = std::find(probe_names.begin(), probe_names.end(), name);
    if (it == probe_names.end()) throw ParameterError("trajectory has no probe '" + name + "'");
    const auto j = static_cast<std::size_t>(it - probe_names.begin());
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& row : records) out.push_back(row[j]);
    return out;
  }
};

enum class Method { explicit_euler, rk4 };

struct IntegratorConfig {
  Method method = Method::rk4;
  double dt = 1e-3;
  double t_start = 0.0;
  double t_end = 1.0;
  long record_every = 1;
  double divergence_threshold = 1e12;
};

namespace detail {

inline long step_count(const IntegratorConfig& cfg) {
  require_positive(cfg.dt, "dt");
  if (!(cfg.t_start >= 0.0) || !(cfg.t_end > cfg.t_start))
    throw ParameterError("integrator needs 0 <= t_start < t_end");
  if (cfg.record_every < 1) throw ParameterError("record_every must be a positive integer");
  const double span = cfg.t_end - cfg.t_start;
  const double ratio = span / cfg.dt;
  if (ratio > 1e8) throw ParameterError("more than 1e8 integration steps requested");
  const double steps = std::round(ratio);
  if (steps < 1.0 || std::abs(steps * cfg.dt - span) > 1e-9 * std::max(1.0, span))
    throw ParameterError("t_end - t_start must be an integer multiple of dt");
  return static_cast<long>(steps);
}

using StackedRhs = std::function<Vector(double, const Vector&)>;

inline Vector advance(Method method, const StackedRhs& f, double t, const Vector& y, double h) {
  if (method == Method::explicit_euler) return y + h * f(t, y);
  const Vector k1 = f(t, y);
  const Vector k2 = f(t + 0.5 * h, y + (0.5 * h) * k1);
  const Vector k3 = f(t + 0.5 * h, y + (0.5 * h) * k2);
  const Vector k4 = f(t + h, y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Fixed-step integration. Order-2 fields are integrated on the stacked state (x, x').
/// The grid is t_k = t_start + k dt; a step containing a breakpoint is split there.
/// Probes run at every `record_every`-th grid point and at the final point. For order-1
/// fields the stored velocity is field(t_k, x_k).
inline Trajectory integrate(const FlowField& field, const Vector& x0, const IntegratorConfig& cfg,
                            const std::vector<Probe>& probes = {},
                            const std::optional<Vector>& v0 = std::nullopt) {
  const long steps = detail::step_count(cfg);
  require_vector(x0, "initial state");
  if (field.dim != 0 && x0.size() != field.dim)
    throw ParameterError("initial state has dimension " + std::to_string(x0.size()) +
                         ", field expects " + std::to_string(field.dim));
  const bool second = field.order == 2;
  if (second != v0.has_value())
    throw ParameterError("initial velocity must be supplied exactly for order-2 fields");
  const Eigen::Index n = x0.size();
  if (second) {
    require_vector(*v0, "initial velocity");
    if (v0->size() != n) throw ParameterError("initial velocity dimension mismatch");
  }

  detail::StackedRhs rhs;
  Vector y;
  if (second) {
    rhs = [&field, n](double t, const Vector& s) {
      Vector d(2 * n);
      d.head(n) = s.tail(n);
      d.tail(n) = field.second(t, s.head(n), s.tail(n));
      return d;
    };
    y.resize(2 * n);
    y << x0, *v0;
  } else {
    rhs = [&field](double t, const Vector& s) { return field.first(t, s); };
    y = x0;
  }

  std::vector<double> kinks;
  for (double b : field.breakpoints)
    if (b > cfg.t_start && b < cfg.t_end) kinks.push_back(b);
  std::sort(kinks.begin(), kinks.end());

  auto traj = std::make_shared<Trajectory>();
  traj->order = field.order;
  traj->dim = n;
  traj->label = field.label;
  for (const auto& p : probes) traj->probe_names.push_back(p.name);
  const auto expected = static_cast<std::size_t>(steps / cfg.record_every + 2);
  traj->times.reserve(expected);
  traj->states.reserve(expected);
  traj->velocities.reserve(expected);

  auto record = [&](double t) {
    Vector x = second ? Vector(y.head(n)) : y;
    Vector v = second ? Vector(y.tail(n)) : field.first(t, y);
    std::vector<double> row;
    row.reserve(probes.size());
    const ProbePoint point{t, x, v, traj->times.size()};
    for (const auto& p : probes) row.push_back(p.fn(point));
    traj->times.push_back(t);
    traj->states.push_back(std::move(x));
    traj->velocities.push_back(std::move(v));
    traj->records.push_back(std::move(row));
  };

  record(cfg.t_start);
  auto next_kink = kinks.begin();
  double t = cfg.t_start;
  for (long k = 1; k <= steps; ++k) {
    const double t_next = cfg.t_start + static_cast<double>(k) * cfg.dt;
    double from = t;
    while (next_kink != kinks.end() && *next_kink <= from) ++next_kink;
    while (next_kink != kinks.end() && *next_kink < t_next) {
      y = detail::advance(cfg.method, rhs, from, y, *next_kink - from);
      from = *next_kink;
      ++next_kink;
    }
    Vector candidate = detail::advance(cfg.method, rhs, from, y, t_next - from);
    if (!candidate.allFinite() || candidate.lpNorm<Eigen::Infinity>() > cfg.divergence_threshold)
      throw DivergenceError(field.label + ": state left the finite range after t=" + std::to_string(t),
                            t, traj);
    y = std::move(candidate);
    t = t_next;
    if (k % cfg.record_every == 0 || k == steps) record(t);
  }
  return std::move(*traj);
}

/// x + field(t, x): the explicit Euler step with h = 1.
inline Vector euler_unit_step(const FlowField& field, const Vector& x, double t) {
  if (field.order != 1) throw ParameterError("euler_unit_step needs an order-1 field");
  return x + field.first(t, x);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with header t,x_0..x_{n-1}[,v_0..v_{n-1}],<probe names>; velocity columns are
/// written for order-2 trajectories, where x' is part of the state.
inline void write_csv(const Trajectory& traj, std::ostream& out) {
  const bool with_v = traj.order == 2;
  out << "t";
  for (Eigen::Index i = 0; i < traj.dim; ++i) out << ",x_" << i;
  if (with_v)
    for (Eigen::Index i = 0; i < traj.dim; ++i) out << ",v_" << i;
  for (const auto& name : traj.probe_names) out << ',' << name;
  out << '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out << format_double(traj.times[k]);
    for (Eigen::Index i = 0; i < traj.dim; ++i) out << ',' << format_double(traj.states[k](i));
    if (with_v)
      for (Eigen::Index i = 0; i < traj.dim; ++i) out << ',' << format_double(traj.velocities[k](i));
    for (double r : traj.records[k]) out << ',' << format_double(r);
    out << '\n';
  }
}

inline void write_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_csv(traj, out);
}

}  // namespace opsplit
