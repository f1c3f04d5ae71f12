#pragma once

// First-order flows: Krasnosel'skii-Mann, forward-backward (optionally Tikhonov-regularized),
// forward-backward-forward and Douglas-Rachford in its coupled and reflected forms.
//
// Fields are written as (next point) - x so that an explicit Euler step with h = 1
// reproduces the matching discrete iteration exactly.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "opsplit/flow_engine.hpp"
#include "opsplit/operator_core.hpp"

namespace opsplit {

/// Grid on which schedule hypotheses are checked.
struct ProbeGrid {
  double t0 = 0.0;
  double t1 = 100.0;
  int samples = 2001;
};

struct KMFlowSpec {
  SingleValuedMap T;
  Schedule lambda;
  std::optional<double> averaged_alpha;  // T alpha-averaged allows lambda up to 1/alpha
  ProbeGrid grid{};
};

enum class TikhonovSign { as_printed, standard };

struct FBFlowSpec {
  MonotoneMap A;
  SingleValuedMap B;
  double gamma = 1.0;
  Schedule lambda = schedules::constant(1.0);
  std::optional<Schedule> epsilon;
  TikhonovSign tikhonov_sign = TikhonovSign::as_printed;  // +eps x inside the resolvent
  ProbeGrid grid{};
};

struct FBFFlowSpec {
  MonotoneMap A;
  SingleValuedMap B;
  double gamma = 0.5;
  double lambda = 0.5;
};

enum class DRForm { coupled, reflected };

struct DRFlowSpec {
  MonotoneMap A;
  MonotoneMap B;
  double gamma = 1.0;
  DRForm form = DRForm::reflected;
};

inline FlowField km_field(const KMFlowSpec& spec) {
  const double upper = spec.averaged_alpha ? 1.0 / *spec.averaged_alpha : 1.0;
  if (spec.averaged_alpha && !(*spec.averaged_alpha > 0.0 && *spec.averaged_alpha < 1.0))
    throw ParameterError("averagedness constant must lie in (0, 1)");
  if (!spec.averaged_alpha && spec.T.lipschitz && *spec.T.lipschitz > 1.0 + 1e-12)
    throw HypothesisError("KM map '" + spec.T.name + "' is not nonexpansive");
  require_schedule_within(spec.lambda, 0.0, upper, "KM relaxation lambda", spec.grid.t0,
                          spec.grid.t1, spec.grid.samples);
  const auto T = spec.T.eval;
  const auto lambda = spec.lambda.eval;
  FlowField field;
  field.order = 1;
  field.label = "km";
  field.breakpoints = spec.lambda.breakpoints;
  if (auto w = relaxation_integral_warning(spec.lambda, upper, "KM relaxation lambda", spec.grid.t0, spec.grid.t1,
                                           spec.grid.samples))
    field.warnings.push_back(*w);
  field.first = [T, lambda](double t, const Vector& x) -> Vector { return lambda(t) * (T(x) - x); };
  return field;
}

inline FlowField fb_field(const FBFlowSpec& spec) {
  const double beta = require_cocoercivity(spec.B);
  require_positive(spec.gamma, "forward-backward step gamma");
  if (!(spec.gamma < 2.0 * beta))
    throw HypothesisError("forward-backward step gamma must lie in (0, 2 beta)");
  const double delta = fb_delta(beta, spec.gamma);
  require_schedule_within(spec.lambda, 0.0, delta, "forward-backward relaxation lambda",
                          spec.grid.t0, spec.grid.t1, spec.grid.samples);
  const auto J = spec.A.resolvent;
  const auto B = spec.B.eval;
  const auto lambda = spec.lambda.eval;
  const double gamma = spec.gamma;
  FlowField field;
  field.order = 1;
  field.breakpoints = spec.lambda.breakpoints;
  if (auto w = relaxation_integral_warning(spec.lambda, delta, "forward-backward relaxation lambda", spec.grid.t0,
                                           spec.grid.t1, spec.grid.samples))
    field.warnings.push_back(*w);
  if (spec.epsilon) {
    const auto eps = spec.epsilon->eval;
    const double sign = spec.tikhonov_sign == TikhonovSign::as_printed ? 1.0 : -1.0;
    field.label = "fb_tikhonov";
    field.breakpoints.insert(field.breakpoints.end(), spec.epsilon->breakpoints.begin(),
                             spec.epsilon->breakpoints.end());
    field.first = [=](double t, const Vector& x) -> Vector {
      return lambda(t) * (J(gamma, x - gamma * B(x) + (sign * eps(t)) * x) - x);
    };
  } else {
    field.label = "fb";
    field.first = [=](double t, const Vector& x) -> Vector {
      return lambda(t) * (J(gamma, x - gamma * B(x)) - x);
    };
  }
  return field;
}

inline FlowField fbf_field(const FBFFlowSpec& spec) {
  require_positive(spec.gamma, "forward-backward-forward step gamma");
  require_positive(spec.lambda, "forward-backward-forward lambda");
  if (!spec.B.lipschitz)
    throw HypothesisError("forward-backward-forward needs a Lipschitz constant for B");
  if (!(spec.gamma * *spec.B.lipschitz < 1.0))
    throw HypothesisError("forward-backward-forward needs gamma L < 1");
  const auto J = spec.A.resolvent;
  const auto B = spec.B.eval;
  const double gamma = spec.gamma;
  const double lambda = spec.lambda;
  FlowField field;
  field.order = 1;
  field.label = "fbf";
  field.first = [=](double, const Vector& x) -> Vector {
    const Vector Bx = B(x);
    const Vector y = J(gamma, x - gamma * Bx);
    return (y - x) + lambda * (Bx - B(y));
  };
  return field;
}

namespace detail {
inline Matrix central_jacobian(const std::function<Vector(const Vector&)>& F, const Vector& x) {
  const Eigen::Index n = x.size();
  Matrix J(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = 1e-6 * (1.0 + std::abs(x(i)));
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    J.col(i) = (F(xp) - F(xm)) / (2.0 * h);
  }
  return J;
}
}  // namespace detail

/// reflected: state z, z' = (R_A R_B z - z)/2.
/// coupled:   state x, x' + x = J_{gamma A}(x - y) - y', y = gamma B(x), solved for x'
///            through the central-difference Jacobian of B.
inline FlowField dr_field(const DRFlowSpec& spec) {
  require_positive(spec.gamma, "Douglas-Rachford step gamma");
  const auto JA = spec.A.resolvent;
  const double gamma = spec.gamma;
  FlowField field;
  field.order = 1;
  if (spec.form == DRForm::reflected) {
    const auto JB = spec.B.resolvent;
    field.label = "dr_reflected";
    field.first = [=](double, const Vector& z) -> Vector {
      const Vector rb = 2.0 * JB(gamma, z) - z;
      const Vector ra = 2.0 * JA(gamma, rb) - rb;
      return 0.5 * (ra - z);
    };
    return field;
  }
  if (!spec.B.single || !spec.B.single->differentiable)
    throw HypothesisError("coupled Douglas-Rachford form needs a differentiable single-valued B; "
                          "use the reflected form");
  const auto B = spec.B.single->eval;
  field.label = "dr_coupled";
  field.first = [=](double, const Vector& x) -> Vector {
    const Vector y = gamma * B(x);
    const Vector rhs = JA(gamma, x - y) - x;
    Matrix system = gamma * detail::central_jacobian(B, x);
    system.diagonal().array() += 1.0;
    return system.partialPivLu().solve(rhs);
  };
  return field;
}

/// Initial datum for the reflected form matching coupled data x0: z0 = x0 + gamma B(x0).
inline Vector dr_coupled_to_reflected(const DRFlowSpec& spec, const Vector& x) {
  if (!spec.B.single) throw HypothesisError("B has no direct evaluation");
  return x + spec.gamma * spec.B.single->eval(x);
}

/// Recovers x = J_{gamma B}(z) from the reflected state.
inline Vector dr_reflected_to_coupled(const DRFlowSpec& spec, const Vector& z) {
  return spec.B.resolvent(spec.gamma, z);
}

// ---------------------------------------------------------------------------
// Probes: fp_residual, dist_to_ref, field_norm

inline Probe fp_residual_probe(std::function<Vector(const Vector&)> T) {
  return {"fp_residual", [T](const ProbePoint& p) { return (T(p.x) - p.x).norm(); }};
}

inline Probe dist_to_ref_probe(const Vector& ref) {
  return {"dist_to_ref", [ref](const ProbePoint& p) { return (p.x - ref).norm(); }};
}

inline Probe field_norm_probe() {
  return {"field_norm", [](const ProbePoint& p) { return p.v.norm(); }};
}

/// Operator whose fixed points the flow seeks: T for KM, the FB map, the Tseng step,
/// or the Douglas-Rachford operator (Id + R_A R_B)/2.
inline std::function<Vector(const Vector&)> fixed_point_map(const KMFlowSpec& s) { return s.T.eval; }

inline std::function<Vector(const Vector&)> fixed_point_map(const FBFlowSpec& s) {
  const auto J = s.A.resolvent;
  const auto B = s.B.eval;
  const double g = s.gamma;
  return [=](const Vector& x) -> Vector { return J(g, x - g * B(x)); };
}

inline std::function<Vector(const Vector&)> fixed_point_map(const FBFFlowSpec& s) {
  const auto J = s.A.resolvent;
  const auto B = s.B.eval;
  const double g = s.gamma;
  return [=](const Vector& x) -> Vector { return J(g, x - g * B(x)); };
}

inline std::function<Vector(const Vector&)> fixed_point_map(const DRFlowSpec& s) {
  const auto JA = s.A.resolvent;
  const auto JB = s.B.resolvent;
  const double g = s.gamma;
  return [=](const Vector& z) -> Vector {
    const Vector rb = 2.0 * JB(g, z) - z;
    return 0.5 * (z + 2.0 * JA(g, rb) - rb);
  };
}

}  // namespace opsplit
