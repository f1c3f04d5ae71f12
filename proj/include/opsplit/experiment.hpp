#pragma once

// Experiment configuration (JSON), the flow registry that turns a problem and a flow name
// into an integrable field, and the run pipeline that writes trajectory.csv and
// diagnostics.json.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "opsplit/diagnostics.hpp"
#include "opsplit/discrete_algorithms.hpp"
#include "opsplit/first_order_flows.hpp"
#include "opsplit/flow_engine.hpp"
#include "opsplit/nonconvex_flows.hpp"
#include "opsplit/primal_dual_flows.hpp"
#include "opsplit/problems.hpp"
#include "opsplit/second_order_flows.hpp"

namespace opsplit {

using nlohmann::json;

struct ExperimentConfig {
  std::string problem;
  std::string flow;
  json flow_params = json::object();
  IntegratorConfig integrator;
  std::optional<Vector> x0;
  std::optional<Vector> v0;
  std::vector<std::string> probes;
  std::vector<std::string> checks;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
};

namespace detail {

inline json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + " must be a nonempty array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + " must contain numbers only");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline double number(const json& params, const std::string& key, const std::string& where) {
  if (!params.contains(key)) throw ConfigError(where + ": missing parameter '" + key + "'");
  if (!params.at(key).is_number()) throw ConfigError(where + ": parameter '" + key + "' must be a number");
  return params.at(key).get<double>();
}

inline double number_or(const json& params, const std::string& key, double fallback, const std::string& where) {
  return params.contains(key) ? number(params, key, where) : fallback;
}

inline void require_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

/// Schedule from {"family": ..., "params": {...}} or a bare number (constant).
inline Schedule schedule_from_json(const json& j, const std::string& where) {
  if (j.is_number()) return schedules::constant(j.get<double>());
  detail::require_keys(j, {"family", "params"}, where);
  if (!j.contains("family") || !j.at("family").is_string()) throw ConfigError(where + ": missing schedule family");
  const std::string family = j.at("family").get<std::string>();
  const json params = j.value("params", json::object());
  const std::string w = where + " (" + family + ")";
  if (family == "constant") return schedules::constant(detail::number(params, "value", w));
  if (family == "affine_clamped")
    return schedules::affine_clamped(detail::number(params, "a", w), detail::number(params, "b", w),
                                     detail::number(params, "lo", w), detail::number(params, "hi", w));
  if (family == "inverse_power")
    return schedules::inverse_power(detail::number(params, "c", w), detail::number(params, "p", w));
  if (family == "alpha_over_t") return schedules::alpha_over_t(detail::number(params, "alpha", w));
  if (family == "exp_relax")
    return schedules::exp_relax(detail::number(params, "a", w), detail::number(params, "b", w),
                                detail::number(params, "c", w));
  throw ConfigError(where + ": unknown schedule family '" + family + "'");
}

inline Schedule schedule_param(const json& params, const std::string& key, const std::string& where,
                               std::optional<double> fallback = std::nullopt) {
  if (!params.contains(key)) {
    if (fallback) return schedules::constant(*fallback);
    throw ConfigError(where + ": missing schedule '" + key + "'");
  }
  return schedule_from_json(params.at(key), where + "." + key);
}

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["problem"] = c.problem;
  j["flow"] = {{"name", c.flow}, {"params", c.flow_params}};
  j["integrator"] = {{"method", c.integrator.method == Method::rk4 ? "rk4" : "explicit_euler"},
                     {"dt", c.integrator.dt},
                     {"t_start", c.integrator.t_start},
                     {"t_end", c.integrator.t_end},
                     {"record_every", c.integrator.record_every}};
  if (c.x0) j["x0"] = detail::vector_to_json(*c.x0);
  if (c.v0) j["v0"] = detail::vector_to_json(*c.v0);
  j["probes"] = c.probes;
  j["checks"] = c.checks;
  j["output"] = {{"dir", c.out_dir}};
  j["seed"] = c.seed;
  return j;
}

inline std::string serialize(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

inline ExperimentConfig config_from_json(const json& j) {
  detail::require_keys(j, {"problem", "flow", "integrator", "x0", "v0", "probes", "checks", "output", "seed"},
                       "config");
  ExperimentConfig c;
  if (!j.contains("problem") || !j.at("problem").is_string()) throw ConfigError("config: missing 'problem'");
  c.problem = j.at("problem").get<std::string>();
  if (!j.contains("flow")) throw ConfigError("config: missing 'flow'");
  const json& flow = j.at("flow");
  detail::require_keys(flow, {"name", "params"}, "flow");
  if (!flow.contains("name") || !flow.at("name").is_string()) throw ConfigError("flow: missing 'name'");
  c.flow = flow.at("name").get<std::string>();
  c.flow_params = flow.value("params", json::object());
  if (!c.flow_params.is_object()) throw ConfigError("flow.params must be an object");
  if (!j.contains("integrator")) throw ConfigError("config: missing 'integrator'");
  const json& in = j.at("integrator");
  detail::require_keys(in, {"method", "dt", "t_start", "t_end", "record_every"}, "integrator");
  const std::string method = in.value("method", "rk4");
  if (method == "rk4") c.integrator.method = Method::rk4;
  else if (method == "explicit_euler") c.integrator.method = Method::explicit_euler;
  else throw ConfigError("integrator: unknown method '" + method + "'");
  c.integrator.dt = detail::number(in, "dt", "integrator");
  c.integrator.t_start = detail::number_or(in, "t_start", 0.0, "integrator");
  c.integrator.t_end = detail::number(in, "t_end", "integrator");
  if (in.contains("record_every") && !in.at("record_every").is_number_integer())
    throw ConfigError("integrator: record_every must be an integer");
  c.integrator.record_every = in.value("record_every", 1L);
  if (j.contains("x0")) c.x0 = detail::vector_from_json(j.at("x0"), "x0");
  if (j.contains("v0")) c.v0 = detail::vector_from_json(j.at("v0"), "v0");
  auto strings = [&](const char* key) {
    std::vector<std::string> out;
    if (!j.contains(key)) return out;
    if (!j.at(key).is_array()) throw ConfigError(std::string(key) + " must be an array of names");
    for (const auto& e : j.at(key)) {
      if (!e.is_string()) throw ConfigError(std::string(key) + " must be an array of names");
      out.push_back(e.get<std::string>());
    }
    return out;
  };
  c.probes = strings("probes");
  c.checks = strings("checks");
  if (j.contains("output")) {
    detail::require_keys(j.at("output"), {"dir"}, "output");
    c.out_dir = j.at("output").value("dir", c.out_dir);
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed must be a nonnegative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  return c;
}

// ---------------------------------------------------------------------------
// Flow registry

using CheckFn = std::function<std::vector<CheckReport>(const Trajectory&)>;

struct BuiltFlow {
  FlowField field;
  Vector x0;
  std::optional<Vector> v0;
  double default_t_start = 0.0;
  std::function<Vector(const Vector&)> estimate;       // state -> solution estimate
  std::function<Vector(const Vector&)> fixed_point;    // map whose fixed points are sought
  std::map<std::string, std::function<Probe()>> probes;
  std::map<std::string, CheckFn> checks;
  std::vector<std::string> default_probes;
  std::vector<std::string> default_checks;
};

struct FlowInfo {
  std::string name;
  std::string description;
};

inline std::vector<FlowInfo> flow_registry() {
  return {
      {"km", "x' = lambda(t) (T x - x)"},
      {"fb", "x' = lambda(t) [J_{gamma A}(x - gamma B x [+/- eps(t) x]) - x]"},
      {"fbf", "y = J_{gamma A}(x - gamma B x), x' = y - x + lambda (B x - B y)"},
      {"gradient", "x' = -B x"},
      {"dr_reflected", "z' = (R_{gamma A} R_{gamma B} z - z)/2"},
      {"dr_coupled", "x' + x = J_{gamma A}(x - y) - y', y = gamma B x"},
      {"second_order", "x'' = -gamma(t) x' - lambda(t) B x, B cocoercive"},
      {"second_order_nonexpansive", "x'' = -gamma(t) x' - lambda(t) (x - T x)"},
      {"second_order_fb", "x'' = -gamma(t) x' - lambda(t) (x - J_{eta A}(x - eta B x))"},
      {"avd", "x'' = -(alpha/t) x' - grad g(x)"},
      {"avd_yosida", "x'' = -(alpha/t) x' - A_{lambda(t)} x"},
      {"proxgrad", "x' = prox_{eta f}(x - eta grad g(x)) - x"},
      {"pd_special", "full-splitting primal-dual dynamics with step tau(t)"},
      {"pd_general", "primal-dual dynamics with metrics M1 = I/tau - c A^T A, M2 = 0 solved by the inner solver"},
  };
}

namespace detail {

template <class T>
const T& need(const std::optional<T>& v, const std::string& what, const ProblemDef& p, const std::string& flow) {
  if (!v) throw ConfigError("flow '" + flow + "' needs " + what + ", which problem '" + p.name + "' does not define");
  return *v;
}

inline void add_first_order_probes(BuiltFlow& b, const ProblemDef& p) {
  const auto fp = b.fixed_point;
  const auto est = b.estimate;
  b.probes["fp_residual"] = [fp] { return fp_residual_probe(fp); };
  b.probes["field_norm"] = [] { return field_norm_probe(); };
  if (p.known_solution) {
    const Vector ref = *p.known_solution;
    b.probes["dist_to_ref"] = [ref, est] {
      return Probe{"dist_to_ref", [ref, est](const ProbePoint& q) { return (est(q.x) - ref).norm(); }};
    };
  }
  b.default_probes = {"fp_residual", "field_norm"};
  if (p.known_solution) b.default_probes.push_back("dist_to_ref");
}

inline std::vector<double> state_norm_series(const Trajectory& t, const std::function<double(const Vector&)>& fn) {
  std::vector<double> out;
  out.reserve(t.size());
  for (const auto& x : t.states) out.push_back(fn(x));
  return out;
}

}  // namespace detail

/// Builds the field, probes and checks for `flow` applied to problem `p`.
inline BuiltFlow build_flow(const ProblemDef& p, const std::string& flow, const json& params) {
  using detail::need;
  const std::string where = "flow '" + flow + "'";
  BuiltFlow b;
  b.x0 = p.x0;
  b.v0 = p.v0;
  b.estimate = [](const Vector& x) { return x; };

  if (flow == "km") {
    detail::require_keys(params, {"lambda", "alpha"}, where);
    KMFlowSpec spec{need(p.T, "a map T", p, flow), schedule_param(params, "lambda", where), std::nullopt, {}};
    if (params.contains("alpha")) spec.averaged_alpha = detail::number(params, "alpha", where);
    b.field = km_field(spec);
    b.fixed_point = fixed_point_map(spec);
    detail::add_first_order_probes(b, p);
    const auto T = spec.T.eval;
    const Schedule lambda = spec.lambda;
    b.checks["residual_monotone"] = [T](const Trajectory& t) {
      return std::vector<CheckReport>{residual_monotonicity_check(t, T)};
    };
    b.checks["rate2"] = [T, lambda](const Trajectory& t) {
      return std::vector<CheckReport>{rate2_inequality_check(t, T, lambda)};
    };
    b.default_checks = {"residual_monotone"};
    if (p.known_solution) {
      const Vector ref = *p.known_solution;
      b.checks["fejer"] = [ref](const Trajectory& t) { return std::vector<CheckReport>{fejer_check(t, ref)}; };
      b.default_checks.push_back("fejer");
    }
    return b;
  }

  if (flow == "fb") {
    detail::require_keys(params, {"gamma", "lambda", "epsilon", "tikhonov_sign"}, where);
    FBFlowSpec spec{need(p.A, "an operator A", p, flow), need(p.B, "an operator B", p, flow),
                    detail::number(params, "gamma", where), schedule_param(params, "lambda", where, 1.0)};
    if (params.contains("epsilon")) spec.epsilon = schedule_param(params, "epsilon", where);
    if (params.contains("tikhonov_sign")) {
      const std::string s = params.at("tikhonov_sign").get<std::string>();
      if (s == "as_printed") spec.tikhonov_sign = TikhonovSign::as_printed;
      else if (s == "standard") spec.tikhonov_sign = TikhonovSign::standard;
      else throw ConfigError(where + ": tikhonov_sign must be 'as_printed' or 'standard'");
    }
    b.field = fb_field(spec);
    b.fixed_point = fixed_point_map(spec);
    detail::add_first_order_probes(b, p);
    if (p.f && p.g && p.known_solution && !spec.epsilon) {
      const ProxObject f = *p.f;
      const SmoothFunction g = *p.g;
      const double gamma = spec.gamma;
      const Vector ref = *p.known_solution;
      const Schedule lambda = spec.lambda;
      b.checks["cont_ista"] = [=](const Trajectory& t) {
        for (double s : t.times)
          if (lambda(s) != 1.0) throw HypothesisError("continuous ISTA certificate needs lambda = 1");
        return cont_ista_certificate(t, f, g, gamma, ref);
      };
    }
    if (p.known_solution && !spec.epsilon) {
      const Vector ref = *p.known_solution;
      b.checks["fejer"] = [ref](const Trajectory& t) { return std::vector<CheckReport>{fejer_check(t, ref)}; };
    }
    return b;
  }

  if (flow == "fbf") {
    detail::require_keys(params, {"gamma", "lambda"}, where);
    FBFFlowSpec spec{need(p.A, "an operator A", p, flow), need(p.B, "an operator B", p, flow),
                     detail::number(params, "gamma", where), detail::number(params, "lambda", where)};
    b.field = fbf_field(spec);
    b.fixed_point = fixed_point_map(spec);
    detail::add_first_order_probes(b, p);
    return b;
  }

  if (flow == "gradient") {
    detail::require_keys(params, {}, where);
    const auto B = need(p.B, "an operator B", p, flow).eval;
    b.field.order = 1;
    b.field.label = "gradient";
    b.field.first = [B](double, const Vector& x) -> Vector { return -B(x); };
    b.fixed_point = [B](const Vector& x) -> Vector { return x - B(x); };
    detail::add_first_order_probes(b, p);
    return b;
  }

  if (flow == "dr_reflected" || flow == "dr_coupled") {
    detail::require_keys(params, {"gamma"}, where);
    DRFlowSpec spec{need(p.A, "an operator A", p, flow), need(p.B_resolvent, "the resolvent of B", p, flow),
                    detail::number(params, "gamma", where),
                    flow == "dr_reflected" ? DRForm::reflected : DRForm::coupled};
    b.field = dr_field(spec);
    if (spec.form == DRForm::reflected) {
      b.x0 = dr_coupled_to_reflected(spec, p.x0);
      b.estimate = [spec](const Vector& z) { return dr_reflected_to_coupled(spec, z); };
      b.fixed_point = fixed_point_map(spec);
    } else {
      const auto JA = spec.A.resolvent;
      const auto B = spec.B.single->eval;
      const double g = spec.gamma;
      b.fixed_point = [=](const Vector& x) -> Vector { return JA(g, x - g * B(x)); };
    }
    detail::add_first_order_probes(b, p);
    return b;
  }

  if (flow == "second_order" || flow == "second_order_nonexpansive" || flow == "second_order_fb") {
    detail::require_keys(params, {"gamma", "lambda", "theta", "eta"}, where);
    SecondOrderSpec spec;
    A1Spec a1{schedule_param(params, "gamma", where), schedule_param(params, "lambda", where),
              detail::number_or(params, "theta", 0.1, where)};
    std::function<Vector(const Vector&)> zero_map;
    if (flow == "second_order") {
      const SingleValuedMap& B = need(p.B, "an operator B", p, flow);
      a1.kind = ThresholdKind::cocoercive;
      a1.parameter = require_cocoercivity(B);
      spec.variant = CocoerciveVariant{B};
    } else if (flow == "second_order_nonexpansive") {
      a1.kind = ThresholdKind::nonexpansive;
      spec.variant = NonexpansiveVariant{need(p.T, "a map T", p, flow)};
    } else {
      const SingleValuedMap& B = need(p.B, "an operator B", p, flow);
      const double eta = detail::number(params, "eta", where);
      a1.kind = ThresholdKind::fb;
      a1.parameter = fb_delta(require_cocoercivity(B), eta);
      spec.variant = FBVariant{need(p.A, "an operator A", p, flow), B, eta};
    }
    spec.a1 = a1;
    b.field = second_order_field(spec);
    if (!b.v0) b.v0 = Vector::Zero(p.x0.size());
    const auto op = second_order_operator(spec);
    b.fixed_point = [op](const Vector& x) -> Vector { return x - op(x); };
    std::optional<Vector> ref = p.known_solution;
    const auto probes = second_order_probes(spec, b.field, ref);
    for (const auto& pr : probes) b.probes[pr.name] = [pr] { return pr; };
    b.default_probes.clear();
    for (const auto& pr : probes) b.default_probes.push_back(pr.name);
    if (ref) {
      b.checks["lyapunov"] = [spec, ref](const Trajectory& t) {
        auto r = nonincreasing_check("lyapunov_nonincreasing", t.times, second_order_lyapunov(t, spec, *ref),
                                     MonotoneSlack{1e-8, 0.0});
        return std::vector<CheckReport>{r};
      };
      b.default_checks = {"lyapunov"};
    }
    return b;
  }

  if (flow == "avd" || flow == "avd_yosida") {
    SecondOrderSpec spec;
    if (flow == "avd") {
      detail::require_keys(params, {"alpha"}, where);
      spec.variant = AVDVariant{need(p.g, "a smooth function g", p, flow), detail::number_or(params, "alpha", 3.0, where)};
      const auto grad = p.g->gradient;
      b.fixed_point = [grad](const Vector& x) -> Vector { return x - grad(x); };
    } else {
      detail::require_keys(params, {"alpha", "lambda"}, where);
      const MonotoneMap A = need(p.A, "an operator A", p, flow);
      spec.variant = YosidaVariant{A, schedule_param(params, "lambda", where, 1.0),
                                   detail::number_or(params, "alpha", 3.0, where)};
      b.fixed_point = [A](const Vector& x) -> Vector { return A.resolvent(1.0, x); };
    }
    b.field = second_order_field(spec);
    b.default_t_start = 1.0;
    if (!b.v0) b.v0 = Vector::Zero(p.x0.size());
    const auto probes = second_order_probes(spec, b.field, p.known_solution);
    for (const auto& pr : probes) b.probes[pr.name] = [pr] { return pr; };
    for (const auto& pr : probes) b.default_probes.push_back(pr.name);
    return b;
  }

  if (flow == "proxgrad") {
    detail::require_keys(params, {"eta"}, where);
    const NonconvexProblem np{need(p.f, "a convex function f", p, flow), need(p.g, "a smooth function g", p, flow),
                              detail::number(params, "eta", where)};
    b.field = proxgrad_field(np);
    b.fixed_point = [np](const Vector& x) { return proxgrad_point(np, x); };
    for (const char* name : {"merit_H", "merit_subgrad", "crit_residual", "speed", "arclength"}) {
      const std::string n = name;
      b.probes[n] = [np, n] {
        for (auto& pr : nonconvex_probes(np))
          if (pr.name == n) return pr;
        throw ConfigError("unknown probe " + n);
      };
      b.default_probes.push_back(n);
    }
    b.checks["merit_descent"] = [np](const Trajectory& t) {
      std::vector<double> D;
      for (std::size_t k = 0; k < t.size(); ++k) D.push_back(merit_eval(np, t.states[k] + t.velocities[k], t.states[k]));
      return std::vector<CheckReport>{nonincreasing_check("merit_nonincreasing", t.times, D, MonotoneSlack{1e-8, 0.0}),
                                      merit_descent_check(t, np)};
    };
    b.checks["subgradient_bound"] = [np](const Trajectory& t) {
      return std::vector<CheckReport>{subgradient_bound_check(t, np)};
    };
    b.default_checks = {"merit_descent", "subgradient_bound"};
    return b;
  }

  if (flow == "pd_special" || flow == "pd_general") {
    detail::require_keys(params, {"c", "gamma_relax", "tau"}, where);
    const StructuredProblem prob = need(p.pd, "a structured primal-dual problem", p, flow);
    PDParams pp;
    pp.c = detail::number_or(params, "c", 1.0, where);
    pp.gamma_relax = detail::number_or(params, "gamma_relax", 1.0, where);
    pp.tau = schedule_param(params, "tau", where);
    b.field = flow == "pd_special" ? pd_field_special(prob, pp)
                                   : pd_field_general(prob, pp, full_splitting_M1(prob, pp), zero_metric(prob.m()));
    const Eigen::Index n = prob.n(), m = prob.m();
    const FlowField field = b.field;
    b.fixed_point = [field](const Vector& s) -> Vector { return s + field.first(0.0, s); };
    for (const auto& pr : primal_dual_probes(prob, pp)) {
      b.probes[pr.name] = [pr] { return pr; };
      if (pr.name != "dual_line_consistency") b.default_probes.push_back(pr.name);
    }
    b.checks["feasibility"] = [prob, n, m](const Trajectory& t) {
      CheckReport r{"feasibility_below_1e-5"};
      const PDState s = PDState::unpack(t.final_state(), n, m);
      r.observe(t.times.back(), 1e-5 - (prob.A * s.x - s.z).norm());
      return std::vector<CheckReport>{r};
    };
    b.default_checks = {"feasibility"};
    return b;
  }

  throw ConfigError("unknown flow '" + flow + "'");
}

// ---------------------------------------------------------------------------
// Loading and running

/// Validates references and hypotheses by constructing the flow; throws ConfigError for
/// unknown names and HypothesisError/ParameterError for violated hypotheses.
inline BuiltFlow validate(const ExperimentConfig& c) {
  const ProblemDef p = find_problem(c.problem);
  BuiltFlow b = build_flow(p, c.flow, c.flow_params);
  for (const auto& name : c.probes)
    if (!b.probes.count(name)) throw ConfigError("probe '" + name + "' is not available for flow '" + c.flow + "'");
  for (const auto& name : c.checks)
    if (!b.checks.count(name) && name != "final_residual")
      throw ConfigError("check '" + name + "' is not available for flow '" + c.flow + "'");
  if (c.x0 && c.x0->size() != b.x0.size()) throw ConfigError("x0 has the wrong dimension");
  if (c.v0 && (b.field.order != 2 || c.v0->size() != b.x0.size()))
    throw ConfigError("v0 is only accepted for order-2 flows, with the problem dimension");
  detail::step_count(c.integrator);
  if (c.integrator.t_start < b.default_t_start)
    throw ParameterError("flow '" + c.flow + "' needs t_start >= " + std::to_string(b.default_t_start));
  return b;
}

inline ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i + 1 < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError("parse error at line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                      e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig c = parse_config(buf.str());
  validate(c);
  return c;
}

struct RunResult {
  Trajectory trajectory;
  std::vector<CheckReport> reports;
  double final_residual = 0.0;
  std::optional<RateFit> rate;
  std::string summary;
  std::vector<std::string> warnings;
  bool pass = true;
};

/// Integrates the configured flow, evaluates the requested checks plus the final residual
/// (< 1e-5), and writes trajectory.csv and diagnostics.json into `out_dir`. On divergence
/// the partial trajectory is written before the error propagates.
inline RunResult run_experiment(const ExperimentConfig& c, std::optional<std::string> out_dir = std::nullopt) {
  validate(c);
  ProblemDef problem = find_problem(c.problem);
  if (c.x0) problem.x0 = *c.x0;
  if (c.v0) problem.v0 = *c.v0;
  BuiltFlow b = build_flow(problem, c.flow, c.flow_params);
  const std::filesystem::path dir = out_dir ? *out_dir : c.out_dir;
  std::filesystem::create_directories(dir);

  std::vector<Probe> probes;
  const auto names = c.probes.empty() ? b.default_probes : c.probes;
  for (const auto& name : names) probes.push_back(b.probes.at(name)());

  std::optional<Vector> v0;
  if (b.field.order == 2) v0 = b.v0;

  RunResult r;
  r.warnings = b.field.warnings;
  try {
    r.trajectory = integrate(b.field, b.x0, c.integrator, probes, v0);
  } catch (const DivergenceError& e) {
    if (e.partial()) write_csv(*e.partial(), (dir / "trajectory.csv").string());
    throw;
  }
  write_csv(r.trajectory, (dir / "trajectory.csv").string());

  const auto checks = c.checks.empty() ? b.default_checks : c.checks;
  for (const auto& name : checks) {
    if (name == "final_residual") continue;
    for (auto& rep : b.checks.at(name)(r.trajectory)) r.reports.push_back(std::move(rep));
  }
  r.final_residual = problem.residual(b.estimate(r.trajectory.final_state()));
  CheckReport fr{"final_residual_below_1e-5"};
  fr.observe(r.trajectory.times.back(), 1e-5 - r.final_residual);
  r.reports.push_back(fr);

  std::vector<double> ts, res;
  const double t_mid = c.integrator.t_start + 0.1 * (c.integrator.t_end - c.integrator.t_start);
  for (std::size_t k = 0; k < r.trajectory.size(); ++k) {
    const double v = problem.residual(b.estimate(r.trajectory.states[k]));
    if (r.trajectory.times[k] >= t_mid && v > 1e-12) {
      ts.push_back(r.trajectory.times[k]);
      res.push_back(v);
    }
  }
  try {
    r.rate = rate_fit(ts, res, RateModel::exponential);
  } catch (const FitError&) {
    r.rate.reset();
  }

  for (const auto& rep : r.reports) r.pass = r.pass && rep.pass;
  std::ostringstream s;
  s << "flow=" << c.flow << " problem=" << c.problem << " final_residual=" << format_double(r.final_residual);
  if (r.rate) s << " rate=exp(-" << format_double(r.rate->rate) << " t) r2=" << format_double(r.rate->r2);
  else s << " rate=n/a";
  s << " pass=" << (r.pass ? "true" : "false");
  r.summary = s.str();

  json diag;
  diag["problem"] = c.problem;
  diag["flow"] = c.flow;
  diag["final_residual"] = r.final_residual;
  diag["rate"] = r.rate ? json{{"model", "exponential"}, {"rate", r.rate->rate}, {"c", r.rate->c}, {"r2", r.rate->r2}}
                        : json(nullptr);
  diag["checks"] = r.reports;
  diag["summary"] = r.summary;
  diag["warnings"] = r.warnings;
  std::ofstream(dir / "diagnostics.json") << diag.dump(2) << "\n";
  return r;
}

/// Config for the default experiment of a corpus problem.
inline ExperimentConfig default_config(const ProblemDef& p) {
  json j = p.default_experiment;
  j["problem"] = p.name;
  return config_from_json(j);
}

}  // namespace opsplit
