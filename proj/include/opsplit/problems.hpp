#pragma once

// Test-problem corpus. Each problem carries its operators, a starting point, a residual
// that vanishes on solutions, an optional known solution and a default experiment (as a
// JSON config fragment) that solves it.

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "opsplit/nonconvex_flows.hpp"
#include "opsplit/operator_core.hpp"
#include "opsplit/primal_dual_flows.hpp"

namespace opsplit {

enum class ProblemKind { fixed_point, inclusion, convex_composite, nonconvex_composite, structured_pd, saddle };

inline std::string to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::fixed_point: return "fixed-point";
    case ProblemKind::inclusion: return "inclusion";
    case ProblemKind::convex_composite: return "convex-composite";
    case ProblemKind::nonconvex_composite: return "nonconvex-composite";
    case ProblemKind::structured_pd: return "structured-pd";
    case ProblemKind::saddle: return "saddle";
  }
  return "unknown";
}

struct ProblemDef {
  std::string name;
  std::string description;
  ProblemKind kind = ProblemKind::inclusion;
  Eigen::Index dim = 0;

  std::optional<SingleValuedMap> T;  // fixed-point problems
  std::optional<MonotoneMap> A;      // inclusions 0 in A x + B x
  std::optional<SingleValuedMap> B;
  std::optional<MonotoneMap> B_resolvent;  // B with its resolvent, when known
  std::optional<ProxObject> f;       // composite problems: A = subdiff f, B = grad g
  std::optional<SmoothFunction> g;
  std::optional<StructuredProblem> pd;

  Vector x0;
  std::optional<Vector> v0;
  std::optional<Vector> known_solution;
  std::string solution_note;
  std::function<double(const Vector&)> residual;
  nlohmann::json default_experiment;
};

namespace detail {

inline Matrix rotation(double angle) {
  Matrix R(2, 2);
  R << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return R;
}

inline std::function<double(const Vector&)> fb_residual(const MonotoneMap& A, const SingleValuedMap& B,
                                                         double gamma) {
  const auto J = A.resolvent;
  const auto Bf = B.eval;
  return [=](const Vector& x) { return (x - J(gamma, x - gamma * Bf(x))).norm() / gamma; };
}

inline ProblemDef composite(std::string name, std::string description, ProblemKind kind, const ProxObject& f,
                            const SmoothFunction& g, Vector x0) {
  ProblemDef p;
  p.name = std::move(name);
  p.description = std::move(description);
  p.kind = kind;
  p.dim = x0.size();
  p.f = f;
  p.g = g;
  p.A = ops::subdifferential(f);
  p.B = ops::gradient_of(g);
  p.x0 = std::move(x0);
  p.residual = fb_residual(*p.A, *p.B, 1.0 / g.grad_lipschitz);
  return p;
}

/// Discrete forward-backward iterations with step 1/L until the fixed-point defect is below tol.
inline Vector solve_composite(const ProxObject& f, const SmoothFunction& g, Vector x, double tol = 1e-14,
                              long max_iter = 1000000) {
  const double step = 1.0 / g.grad_lipschitz;
  for (long k = 0; k < max_iter; ++k) {
    Vector next = f.prox(step, x - step * g.gradient(x));
    const double change = (next - x).norm();
    x = std::move(next);
    if (change <= tol) return x;
  }
  return x;
}

inline Matrix difference_matrix(Eigen::Index n) {
  Matrix D = Matrix::Zero(n - 1, n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    D(i, i) = -1.0;
    D(i, i + 1) = 1.0;
  }
  return D;
}

inline nlohmann::json constant(double v) { return {{"family", "constant"}, {"params", {{"value", v}}}}; }

inline nlohmann::json integrator(const char* method, double dt, double t_start, double t_end, long every) {
  return {{"method", method}, {"dt", dt}, {"t_start", t_start}, {"t_end", t_end}, {"record_every", every}};
}

}  // namespace detail

/// 10x10 well-conditioned data matrix M = Q diag(s) Q^T, s in [1, 2], and data vector b,
/// generated from a fixed seed.
struct LassoData {
  Matrix M;
  Vector b;
  double mu = 0.8;
};

inline LassoData lasso10d_data() {
  std::mt19937_64 rng(20190523);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const Eigen::Index n = 10;
  Matrix G(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) G(i, j) = unif(rng);
  const Matrix Q = Eigen::HouseholderQR<Matrix>(G).householderQ();
  Vector s(n);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = 1.0 + static_cast<double>(i) / static_cast<double>(n - 1);
  LassoData d;
  d.M = Q * s.asDiagonal() * Q.transpose();
  d.b.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) d.b(i) = 2.0 * unif(rng);
  return d;
}

/// f = mu |x|_1, h = |x - b|^2/2, g = nu |.|_1, A = forward differences on R^5.
struct PDLassoData {
  Vector b;
  double mu = 0.1;
  double nu = 0.5;
};

inline PDLassoData pd_lasso_data() {
  PDLassoData d;
  d.b = make_vector({1.0, 1.2, -0.3, -0.2, 0.8});
  return d;
}

inline StructuredProblem pd_lasso_problem() {
  const PDLassoData d = pd_lasso_data();
  const Eigen::Index n = d.b.size();
  return {prox::l1(d.mu), functions::quadratic(Matrix::Identity(n, n), d.b, 0.5 * d.b.squaredNorm()),
          prox::l1(d.nu), detail::difference_matrix(n)};
}

/// Saddle point of the lasso-analysis problem by the full-splitting discrete scheme.
inline PDState pd_lasso_reference() {
  static const PDState ref = [] {
    const StructuredProblem prob = pd_lasso_problem();
    const double normA = prob.norm_A();
    PDParams params;
    params.c = 1.0;
    params.tau = schedules::constant(0.9 / (normA * normA));
    PDState s{Vector::Zero(prob.n()), Vector::Zero(prob.m()), Vector::Zero(prob.m())};
    for (long k = 0; k < 2000000; ++k) {
      const PDState d = pd_special_increment(prob, params, normA, 0.0, s);
      s = {s.x + d.x, s.z + d.z, s.y + d.y};
      if (d.x.norm() + d.z.norm() + d.y.norm() < 1e-15) break;
    }
    return s;
  }();
  return ref;
}

inline std::vector<ProblemDef> corpus() {
  using detail::constant;
  using detail::integrator;
  std::vector<ProblemDef> out;

  {  // rotation by pi/2 in R^2
    ProblemDef p;
    p.name = "rotation2d";
    p.description = "Fixed points of the rotation by pi/2 in R^2 (Fix T = {0})";
    p.kind = ProblemKind::fixed_point;
    p.dim = 2;
    const Matrix R = detail::rotation(std::numbers::pi / 2.0);
    p.T = SingleValuedMap{"rotation", [R](const Vector& x) { return Vector(R * x); }, std::nullopt, 1.0, true};
    p.x0 = make_vector({1.0, 0.0});
    p.known_solution = Vector::Zero(2);
    p.solution_note = "unique fixed point of a rotation";
    const auto T = p.T->eval;
    p.residual = [T](const Vector& x) { return (T(x) - x).norm(); };
    p.default_experiment = {{"flow", {{"name", "km"}, {"params", {{"lambda", constant(0.7)}}}}},
                            {"integrator", integrator("rk4", 1e-3, 0.0, 50.0, 10)},
                            {"probes", {"fp_residual", "dist_to_ref", "field_norm"}}};
    out.push_back(std::move(p));
  }
  {  // T = -Id
    ProblemDef p;
    p.name = "neg_identity";
    p.description = "Fixed points of T = -Id on R (discrete KM with lambda = 1 oscillates)";
    p.kind = ProblemKind::fixed_point;
    p.dim = 1;
    p.T = SingleValuedMap{"neg_identity", [](const Vector& x) { return Vector(-x); }, std::nullopt, 1.0, true};
    p.x0 = make_vector({1.0});
    p.known_solution = Vector::Zero(1);
    p.solution_note = "Fix(-Id) = {0}";
    p.residual = [](const Vector& x) { return 2.0 * x.norm(); };
    p.default_experiment = {{"flow", {{"name", "km"}, {"params", {{"lambda", constant(1.0)}}}}},
                            {"integrator", integrator("rk4", 1e-3, 0.0, 20.0, 100)},
                            {"probes", {"fp_residual", "dist_to_ref"}}};
    out.push_back(std::move(p));
  }
  {  // 1D lasso
    auto p = detail::composite("lasso1d", "min (x - 2)^2/2 + 0.5 |x| on R; solution 1.5",
                               ProblemKind::convex_composite, prox::l1(0.5),
                               functions::least_squares(Matrix::Identity(1, 1), make_vector({2.0})),
                               make_vector({-1.0}));
    p.known_solution = make_vector({1.5});
    p.solution_note = "soft threshold of 2 at level 0.5";
    p.default_experiment = {{"flow", {{"name", "fb"}, {"params", {{"gamma", 0.3}, {"lambda", constant(1.0)}}}}},
                            {"integrator", integrator("rk4", 1e-3, 0.0, 100.0, 10)},
                            {"probes", {"fp_residual", "dist_to_ref"}},
                            {"checks", {"cont_ista"}}};
    out.push_back(std::move(p));
  }
  {  // 10D lasso
    const LassoData d = lasso10d_data();
    const auto g = functions::least_squares(d.M, d.b);
    auto p = detail::composite("lasso10d", "min |M x - b|^2/2 + 0.8 |x|_1 on R^10, M well conditioned",
                               ProblemKind::convex_composite, prox::l1(d.mu), g, Vector::Zero(10));
    static const Vector ref = detail::solve_composite(prox::l1(d.mu), g, Vector::Zero(10));
    p.known_solution = ref;
    p.solution_note = "discrete forward-backward iterated to a 1e-14 fixed-point defect";
    const double beta = 1.0 / g.grad_lipschitz;
    p.default_experiment = {
        {"flow", {{"name", "fb"}, {"params", {{"gamma", beta}, {"lambda", constant(0.75)}}}}},
        {"integrator", integrator("rk4", 1e-2, 0.0, 200.0, 10)},
        {"probes", {"fp_residual", "dist_to_ref"}}};
    out.push_back(std::move(p));
  }
  {  // box-constrained quadratic
    const Vector c = make_vector({2.0, 0.5});
    auto p = detail::composite("box_quadratic", "min |x - (2, 0.5)|^2/2 over [0,1]^2; solution (1, 0.5)",
                               ProblemKind::convex_composite, prox::box_indicator(2, 0.0, 1.0),
                               functions::least_squares(Matrix::Identity(2, 2), c), make_vector({-0.5, 1.0}));
    p.known_solution = make_vector({1.0, 0.5});
    p.solution_note = "projection of (2, 0.5) onto the box";
    p.v0 = Vector::Zero(2);
    p.default_experiment = {
        {"flow",
         {{"name", "second_order_fb"},
          {"params",
           {{"eta", 1.0},
            {"theta", 0.1},
            {"gamma", {{"family", "exp_relax"}, {"params", {{"a", 2.0}, {"b", 1.0}, {"c", 1.0}}}}},
            {"lambda", {{"family", "exp_relax"}, {"params", {{"a", 1.0}, {"b", -0.5}, {"c", 1.0}}}}}}}}},
        {"integrator", integrator("rk4", 1e-3, 0.0, 100.0, 10)},
        {"probes", {"lyapunov_V", "h", "hdot", "speed", "accel"}}};
    out.push_back(std::move(p));
  }
  {  // box quadratic with a segment of minimizers
    auto p = detail::composite("box_quadratic_degenerate",
                               "min (x_1 - 2)^2/2 over [0,1]^2; argmin {1} x [0,1], gradient (-1, 0) there",
                               ProblemKind::convex_composite, prox::box_indicator(2, 0.0, 1.0),
                               functions::quadratic((Matrix(2, 2) << 1, 0, 0, 0).finished(), make_vector({2.0, 0.0}), 2.0),
                               make_vector({0.2, 0.3}));
    p.known_solution = make_vector({1.0, 0.3});
    p.solution_note = "one member of the minimizing segment";
    p.v0 = Vector::Zero(2);
    p.default_experiment = {{"flow", {{"name", "fb"}, {"params", {{"gamma", 1.0}, {"lambda", constant(1.0)}}}}},
                            {"integrator", integrator("rk4", 1e-2, 0.0, 50.0, 10)},
                            {"probes", {"fp_residual", "field_norm"}}};
    out.push_back(std::move(p));
  }
  {  // strongly convex quadratic + l1
    Matrix Q(3, 3);
    Q << 2.0, 0.5, 0.0, 0.5, 1.5, 0.2, 0.0, 0.2, 1.0;
    const Vector b = make_vector({1.0, -2.0, 0.3});
    const auto g = functions::quadratic(Q, b);
    auto p = detail::composite("strongly_convex_l1", "min x^T Q x/2 - b^T x + 0.5 |x|_1 on R^3, Q positive definite",
                               ProblemKind::convex_composite, prox::l1(0.5), g, make_vector({3.0, 3.0, -3.0}));
    static const Vector ref = detail::solve_composite(prox::l1(0.5), g, Vector::Zero(3));
    p.known_solution = ref;
    p.solution_note = "discrete forward-backward iterated to a 1e-14 fixed-point defect";
    const double beta = 1.0 / g.grad_lipschitz;
    p.default_experiment = {
        {"flow", {{"name", "fb"}, {"params", {{"gamma", beta}, {"lambda", constant(1.0)}}}}},
        {"integrator", integrator("rk4", 1e-2, 0.0, 60.0, 10)},
        {"probes", {"fp_residual", "dist_to_ref"}}};
    out.push_back(std::move(p));
  }
  {  // bilinear saddle
    ProblemDef p;
    p.name = "bilinear_saddle";
    p.description = "Saddle of <x, K y> on R x R: B = (K y, -K^T x) is monotone and 1-Lipschitz, not cocoercive";
    p.kind = ProblemKind::saddle;
    p.dim = 2;
    Matrix K(2, 2);
    K << 0.0, 1.0, -1.0, 0.0;
    p.A = ops::zero_operator();
    p.B = ops::affine_operator("bilinear", K, Vector::Zero(2), std::nullopt, 1.0);
    p.x0 = make_vector({1.0, 0.5});
    p.known_solution = Vector::Zero(2);
    p.solution_note = "the only zero of a rotation generator";
    const auto B = p.B->eval;
    p.residual = [B](const Vector& x) { return B(x).norm(); };
    p.default_experiment = {{"flow", {{"name", "fbf"}, {"params", {{"gamma", 0.5}, {"lambda", 0.5}}}}},
                            {"integrator", integrator("rk4", 1e-3, 0.0, 200.0, 100)},
                            {"probes", {"fp_residual", "dist_to_ref", "field_norm"}}};
    out.push_back(std::move(p));
  }
  {  // two-set feasibility
    ProblemDef p;
    p.name = "two_set_feasibility";
    p.description = "Find x in [0,1]^2 on the line x_2 = x_1 + 0.5: A = normal cone of the box, B = Id - P_line";
    p.kind = ProblemKind::inclusion;
    p.dim = 2;
    const Vector u = make_vector({1.0, 1.0}).normalized();
    const Vector p0 = make_vector({0.0, 0.5});
    const Matrix Mq = Matrix::Identity(2, 2) - u * u.transpose();
    p.A = ops::normal_cone(prox::box_indicator(2, 0.0, 1.0));
    const MonotoneMap Bm = ops::affine_monotone("distance_to_line", Mq, -Mq * p0, 1.0, 1.0);
    p.B = *Bm.single;
    p.B_resolvent = Bm;
    p.x0 = make_vector({1.5, -0.5});
    p.known_solution = make_vector({0.25, 0.75});
    p.solution_note = "one point of the intersection segment from (0, 0.5) to (0.5, 1)";
    p.residual = detail::fb_residual(*p.A, *p.B, 1.0);
    p.default_experiment = {{"flow", {{"name", "dr_reflected"}, {"params", {{"gamma", 1.0}}}}},
                            {"integrator", integrator("rk4", 1e-3, 0.0, 40.0, 10)},
                            {"probes", {"fp_residual", "field_norm"}}};
    out.push_back(std::move(p));
  }
  {  // nonconvex 1 - cos
    ProblemDef p;
    p.name = "nonconvex_cos";
    p.description = "min 1 - cos(x) + 0.1 |x| on R (g nonconvex with 1-Lipschitz gradient)";
    p.kind = ProblemKind::nonconvex_composite;
    p.dim = 1;
    p.f = prox::l1(0.1);
    p.g = SmoothFunction{"one_minus_cos", [](const Vector& x) { return 1.0 - std::cos(x(0)); },
                         [](const Vector& x) { return make_vector({std::sin(x(0))}); }, 1.0, false};
    p.A = ops::subdifferential(*p.f);
    p.x0 = make_vector({2.0});
    p.known_solution = Vector::Zero(1);
    p.solution_note = "0 lies in sin(0) + [-0.1, 0.1]";
    const NonconvexProblem np{*p.f, *p.g, 0.25};
    p.residual = [np](const Vector& x) { return critical_residual(np, x); };
    p.default_experiment = {{"flow", {{"name", "proxgrad"}, {"params", {{"eta", 0.25}}}}},
                            {"integrator", integrator("rk4", 1e-3, 0.0, 200.0, 10)},
                            {"probes", {"merit_H", "merit_subgrad", "crit_residual", "speed", "arclength"}}};
    out.push_back(std::move(p));
  }
  {  // nonconvex valley on a box
    ProblemDef p;
    p.name = "nonconvex_valley";
    p.description = "min (x_2 - x_1^2)^2/2 over [-1.5,1.5]^2; critical set contains the parabola x_2 = x_1^2";
    p.kind = ProblemKind::nonconvex_composite;
    p.dim = 2;
    p.f = prox::box_indicator(2, -1.5, 1.5);
    // Hessian [[6 x1^2 - 2 x2, -2 x1], [-2 x1, 1]]; Frobenius bound over the box.
    const double L = std::sqrt(16.5 * 16.5 + 2.0 * 3.0 * 3.0 + 1.0);
    p.g = SmoothFunction{"valley",
                         [](const Vector& x) { return 0.5 * std::pow(x(1) - x(0) * x(0), 2); },
                         [](const Vector& x) {
                           const double r = x(1) - x(0) * x(0);
                           return make_vector({-2.0 * x(0) * r, r});
                         },
                         L, false};
    p.A = ops::subdifferential(*p.f);
    p.x0 = make_vector({1.0, -0.5});
    p.solution_note = "limit depends on the start; any point of the parabola inside the box is critical";
    const double eta = 0.3 / L;
    const NonconvexProblem np{*p.f, *p.g, eta};
    p.residual = [np](const Vector& x) { return critical_residual(np, x); };
    p.default_experiment = {{"flow", {{"name", "proxgrad"}, {"params", {{"eta", eta}}}}},
                            {"integrator", integrator("rk4", 1e-2, 0.0, 3000.0, 100)},
                            {"probes", {"merit_H", "crit_residual", "speed"}}};
    out.push_back(std::move(p));
  }
  {  // structured primal-dual
    ProblemDef p;
    p.name = "pd_lasso_analysis";
    p.description = "min 0.1 |x|_1 + |x - b|^2/2 + 0.5 |D x|_1 on R^5, D forward differences";
    p.kind = ProblemKind::structured_pd;
    p.pd = pd_lasso_problem();
    p.dim = p.pd->n() + 2 * p.pd->m();
    p.x0 = Vector::Zero(p.dim);
    p.known_solution = pd_lasso_reference().pack();
    p.solution_note = "full-splitting discrete scheme iterated to a 1e-15 step";
    const StructuredProblem prob = *p.pd;
    const Eigen::Index n = prob.n(), m = prob.m();
    p.residual = [prob, n, m](const Vector& s) { return block_residuals(prob, PDState::unpack(s, n, m)).max(); };
    const double normA = prob.norm_A();
    p.default_experiment = {
        {"flow", {{"name", "pd_special"}, {"params", {{"c", 1.0}, {"gamma_relax", 1.0}, {"tau", constant(0.9 / (normA * normA))}}}}},
        {"integrator", integrator("rk4", 1e-2, 0.0, 500.0, 10)},
        {"probes", {"feas_norm", "lagrangian", "block_residuals"}}};
    out.push_back(std::move(p));
  }
  {  // vanishing damping on a quadratic
    ProblemDef p;
    p.name = "avd_quadratic";
    p.description = "min x^2/2 on R through x'' + (3/t) x' + x = 0 from x(1) = 1, x'(1) = 0";
    p.kind = ProblemKind::convex_composite;
    p.dim = 1;
    p.f = prox::zero();
    p.g = functions::quadratic(Matrix::Identity(1, 1), Vector::Zero(1));
    p.A = ops::zero_operator();
    p.B = ops::gradient_of(*p.g);
    p.x0 = make_vector({1.0});
    p.v0 = Vector::Zero(1);
    p.known_solution = Vector::Zero(1);
    p.solution_note = "unique minimizer";
    p.residual = [](const Vector& x) { return x.norm(); };
    p.default_experiment = {{"flow", {{"name", "avd"}, {"params", {{"alpha", 3.0}}}}},
                            {"integrator", integrator("rk4", 1e-2, 1.0, 5001.0, 10)},
                            {"probes", {"objective", "speed"}}};
    out.push_back(std::move(p));
  }
  return out;
}

inline ProblemDef find_problem(const std::string& name) {
  for (auto& p : corpus())
    if (p.name == name) return p;
  throw ConfigError("unknown problem '" + name + "'");
}

}  // namespace opsplit
