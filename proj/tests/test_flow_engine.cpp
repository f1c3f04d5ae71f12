#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "opsplit/flow_engine.hpp"
#include "oracles.hpp"

using namespace opsplit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

FlowField linear_decay(double rate) {
  FlowField f;
  f.order = 1;
  f.label = "decay";
  f.first = [rate](double, const Vector& x) -> Vector { return -rate * x; };
  return f;
}

IntegratorConfig config(Method m, double dt, double t_end, long every = 1, double t_start = 0.0) {
  IntegratorConfig c;
  c.method = m;
  c.dt = dt;
  c.t_end = t_end;
  c.t_start = t_start;
  c.record_every = every;
  return c;
}

}  // namespace

TEST_CASE("zero field gives a constant trajectory", "[flow_engine]") {
  FlowField f;
  f.first = [](double, const Vector& x) -> Vector { return Vector::Zero(x.size()); };
  const Vector x0 = make_vector({1.0, 1.0});
  const Trajectory t = integrate(f, x0, config(Method::rk4, 0.1, 5.0, 3));
  for (const auto& x : t.states) CHECK(x == x0);
  CHECK(euler_unit_step(f, x0, 0.0) == x0);
}

TEST_CASE("RK4 on x' = -2x matches the exponential", "[flow_engine]") {
  const Trajectory t = integrate(linear_decay(2.0), make_vector({1.0}), config(Method::rk4, 1e-3, 1.0, 100));
  CHECK_THAT(t.final_state()(0), WithinAbs(std::exp(-2.0), 1e-8));
  const double ref = oracle::rk4_scalar([](double, double y) { return -2.0 * y; }, 1.0, 0.0, 1.0, 1000);
  CHECK_THAT(t.final_state()(0), WithinAbs(ref, 1e-14));
}

TEST_CASE("damped oscillator matches the characteristic-root solution", "[flow_engine]") {
  FlowField f;
  f.order = 2;
  f.second = [](double, const Vector& x, const Vector& v) -> Vector { return -v - x; };
  const Trajectory t = integrate(f, make_vector({1.0}), config(Method::rk4, 1e-3, 1.0, 1000), {}, make_vector({0.0}));
  // roots -1/2 +- i sqrt(3)/2
  const double w = std::sqrt(3.0) / 2.0;
  const double exact = std::exp(-0.5) * (std::cos(w) + (0.5 / w) * std::sin(w));
  const double exact_v = -std::exp(-0.5) * std::sin(w) / w;
  CHECK_THAT(t.final_state()(0), WithinAbs(exact, 1e-6));
  CHECK_THAT(t.final_velocity()(0), WithinAbs(exact_v, 1e-6));
  CHECK(t.order == 2);
}

TEST_CASE("RK4 global error is fourth order", "[flow_engine][property]") {
  auto err = [](double dt) {
    const Trajectory t = integrate(linear_decay(2.0), make_vector({1.0}), config(Method::rk4, dt, 1.0, 1000000));
    return std::abs(t.final_state()(0) - std::exp(-2.0));
  };
  for (double dt : {0.1, 0.05, 0.025}) {
    const double ratio = err(dt) / err(dt / 2.0);
    INFO("dt=" << dt << " ratio=" << ratio);
    CHECK(ratio >= 12.0);
    CHECK(ratio <= 20.0);
  }
}

TEST_CASE("Euler with h = 1 equals repeated unit steps bitwise", "[flow_engine][property]") {
  FlowField f;
  f.first = [](double t, const Vector& x) -> Vector { return make_vector({-0.3 * x(0) + std::sin(x(1)), 0.1 * t - x(1) * x(0)}); };
  const Vector x0 = make_vector({0.7, -0.2});
  const Trajectory traj = integrate(f, x0, config(Method::explicit_euler, 1.0, 40.0));
  Vector x = x0;
  for (int k = 0; k < 40; ++k) {
    CHECK(traj.states[static_cast<std::size_t>(k)] == x);
    x = euler_unit_step(f, x, static_cast<double>(k));
  }
  CHECK(traj.final_state() == x);
}

TEST_CASE("record times align with the grid", "[flow_engine][property]") {
  const auto cfg = config(Method::rk4, 0.01, 3.5, 7, 0.5);
  const Trajectory t = integrate(linear_decay(1.0), make_vector({1.0}), cfg);
  const long steps = 300;
  for (std::size_t k = 0; k + 1 < t.size(); ++k)
    CHECK_THAT(t.times[k], WithinAbs(0.5 + static_cast<double>(k) * 7 * 0.01, 1e-12));
  CHECK(t.times.back() == 3.5);
  CHECK(t.size() == static_cast<std::size_t>(steps / 7 + 2));
  for (std::size_t k = 1; k < t.size(); ++k) CHECK(t.times[k] > t.times[k - 1]);
}

TEST_CASE("order-1 velocities are the field at the record", "[flow_engine]") {
  const FlowField f = linear_decay(1.5);
  const Trajectory t = integrate(f, make_vector({2.0, -1.0}), config(Method::rk4, 0.1, 2.0, 2));
  for (std::size_t k = 0; k < t.size(); ++k) CHECK(t.velocities[k] == f(t.times[k], t.states[k]));
}

TEST_CASE("probes run at each record", "[flow_engine]") {
  const Trajectory t = integrate(linear_decay(1.0), make_vector({1.0}), config(Method::rk4, 0.1, 1.0, 5),
                                 {{"norm", [](const ProbePoint& p) { return p.x.norm(); }},
                                  {"index", [](const ProbePoint& p) { return static_cast<double>(p.index); }}});
  const auto norm = t.series("norm");
  const auto index = t.series("index");
  REQUIRE(norm.size() == t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    CHECK(norm[k] == t.states[k].norm());
    CHECK(index[k] == static_cast<double>(k));
  }
  CHECK_THROWS_AS(t.series("missing"), ParameterError);
}

TEST_CASE("breakpoints split steps", "[flow_engine]") {
  // x' = max(0, t - 0.25), kink inside a step; exact x(1) = 0.75^2 / 2
  FlowField f;
  f.first = [](double t, const Vector&) -> Vector { return make_vector({std::max(0.0, t - 0.25)}); };
  f.breakpoints = {0.25};
  const Trajectory t = integrate(f, make_vector({0.0}), config(Method::rk4, 0.1, 1.0));
  CHECK_THAT(t.final_state()(0), WithinAbs(0.28125, 1e-14));
  f.breakpoints.clear();
  const Trajectory u = integrate(f, make_vector({0.0}), config(Method::rk4, 0.1, 1.0));
  CHECK(std::abs(u.final_state()(0) - 0.28125) > 1e-6);
}

TEST_CASE("integrator input validation", "[flow_engine][errors]") {
  const FlowField f = linear_decay(1.0);
  CHECK_THROWS_AS(integrate(f, make_vector({1.0}), config(Method::rk4, 0.0, 1.0)), ParameterError);
  CHECK_THROWS_AS(integrate(f, make_vector({1.0}), config(Method::rk4, 0.3, 1.0)), ParameterError);
  CHECK_THROWS_AS(integrate(f, make_vector({1.0}), config(Method::rk4, 1e-9, 1.0)), ParameterError);
  CHECK_THROWS_AS(integrate(f, make_vector({1.0}), config(Method::rk4, 0.1, 1.0, 0)), ParameterError);
  CHECK_THROWS_AS(integrate(f, make_vector({1.0}), config(Method::rk4, 0.1, 1.0), {}, make_vector({0.0})),
                  ParameterError);
  FlowField g = f;
  g.dim = 2;
  CHECK_THROWS_AS(integrate(g, make_vector({1.0}), config(Method::rk4, 0.1, 1.0)), ParameterError);
}

TEST_CASE("divergence carries the last finite time and partial trajectory", "[flow_engine][errors]") {
  FlowField f;
  f.label = "blowup";
  f.first = [](double, const Vector& x) -> Vector { return x.array().square().matrix(); };
  try {
    integrate(f, make_vector({1.0}), config(Method::rk4, 1e-3, 2.0, 10));
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    // x = 1/(1 - t) blows up at t = 1
    CHECK(e.last_finite_time() < 1.1);
    CHECK(e.last_finite_time() > 0.9);
    REQUIRE(e.partial());
    CHECK(e.partial()->size() > 10);
  }
}

TEST_CASE("schedules", "[flow_engine][schedule]") {
  const auto c = schedules::constant(0.4);
  CHECK(c(3.0) == 0.4);
  CHECK(c.dot(3.0) == 0.0);

  const auto a = schedules::affine_clamped(0.2, 0.1, 0.0, 0.5);
  CHECK_THAT(a(1.0), WithinAbs(0.3, 1e-15));
  CHECK(a(10.0) == 0.5);
  REQUIRE(a.breakpoints.size() == 1);
  CHECK_THAT(a.breakpoints[0], WithinAbs(3.0, 1e-12));

  const auto e = schedules::exp_relax(2.0, 1.0, 1.0);
  CHECK_THAT(e(0.0), WithinAbs(3.0, 1e-15));
  CHECK(e.monotone == Monotone::nonincreasing);
  CHECK(schedules::exp_relax(1.0, -0.5, 1.0).monotone == Monotone::nondecreasing);

  const auto v = schedules::alpha_over_t(3.0);
  CHECK(v(2.0) == 1.5);
  CHECK_THROWS_AS(v(0.0), DomainError);

  for (const auto& s : {c, a, e, schedules::inverse_power(0.8, 1.5), v}) {
    const auto r = verify_schedule(s, 0.5, 20.0);
    INFO(s.label << ": " << r.message);
    CHECK(r.pass);
  }

  Schedule wrong = schedules::exp_relax(1.0, -0.5, 1.0);
  wrong.monotone = Monotone::nonincreasing;
  CHECK_FALSE(verify_schedule(wrong, 0.0, 5.0).pass);
  Schedule bad_derivative = schedules::inverse_power(1.0, 1.0);
  bad_derivative.derivative = [](double) { return 0.0; };
  CHECK_FALSE(verify_schedule(bad_derivative, 0.0, 5.0).pass);
}

TEST_CASE("CSV export", "[flow_engine][csv]") {
  const Trajectory t = integrate(linear_decay(1.0), make_vector({1.0, 2.0}), config(Method::rk4, 0.5, 1.0),
                                 {{"norm", [](const ProbePoint& p) { return p.x.norm(); }}});
  std::ostringstream out;
  write_csv(t, out);
  std::istringstream in(out.str());
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "t,x_0,x_1,norm");
  CHECK(first == "0,1,2,2.2360679774997898");
  CHECK(format_double(0.1) == "0.10000000000000001");

  FlowField osc;
  osc.order = 2;
  osc.second = [](double, const Vector& x, const Vector&) -> Vector { return -x; };
  const Trajectory t2 = integrate(osc, make_vector({1.0}), config(Method::rk4, 0.5, 1.0), {}, make_vector({0.0}));
  std::ostringstream out2;
  write_csv(t2, out2);
  CHECK(out2.str().rfind("t,x_0,v_0\n", 0) == 0);
}
