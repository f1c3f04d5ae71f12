#include <algorithm>
#include <cmath>
#include <random>

#include "catch_amalgamated.hpp"
#include "opsplit/operator_core.hpp"
#include "oracles.hpp"

using namespace opsplit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

MonotoneMap identity_operator() { return ops::subdifferential(prox::squared_l2(1.0)); }

MonotoneMap halfline_cone() { return ops::normal_cone(prox::box_indicator(Vector::Zero(1), Vector::Constant(1, kInfinity))); }

}  // namespace

TEST_CASE("prox examples", "[operator_core][prox]") {
  const Vector x = make_vector({3.0, -2.0});
  CHECK(prox_eval(prox::zero(), 1.0, x) == x);

  const double grid = oracle::grid_argmin([](double y) { return std::abs(y) + (y - 3.0) * (y - 3.0) / 2.0; }, -5.0,
                                          5.0, 1e-4);
  const double got = prox_eval(prox::l1(1.0), 1.0, make_vector({3.0}))(0);
  CHECK_THAT(got, WithinAbs(2.0, 1e-12));
  CHECK_THAT(got, WithinAbs(grid, 1e-4));

  CHECK(prox_eval(prox::box_indicator(1, -1.0, 1.0), 5.0, make_vector({2.0}))(0) == 1.0);
  CHECK_THROWS_AS(prox_eval(prox::l1(), 0.0, x), ParameterError);
  CHECK_THROWS_AS(prox_eval(prox::l1(), -1.0, x), ParameterError);
}

TEST_CASE("resolvent and reflected resolvent examples", "[operator_core][resolvent]") {
  const Vector x = make_vector({1.5, -4.0});
  CHECK(resolvent_eval(ops::zero_operator(), 0.7, x) == x);

  const double p = resolvent_eval(identity_operator(), 1.0, make_vector({2.0}))(0);
  const double oracle_p = oracle::ternary_argmin([](double y) { return 0.5 * y * y + 0.5 * (y - 2.0) * (y - 2.0); },
                                                 -10.0, 10.0);
  CHECK_THAT(p, WithinAbs(1.0, 1e-15));
  CHECK_THAT(p, WithinAbs(oracle_p, 1e-8));

  CHECK(resolvent_eval(ops::normal_cone(prox::point_indicator(make_vector({0.0}))), 1.0, make_vector({7.0}))(0) == 0.0);

  CHECK(reflected_resolvent(ops::zero_operator(), 2.0, x) == x);
  CHECK_THAT(reflected_resolvent(identity_operator(), 1.0, make_vector({2.0}))(0), WithinAbs(0.0, 1e-15));
  CHECK_THAT(reflected_resolvent(halfline_cone(), 1.0, make_vector({-3.0}))(0), WithinAbs(3.0, 1e-15));
}

TEST_CASE("Yosida examples", "[operator_core][yosida]") {
  CHECK(yosida_eval(ops::zero_operator(), 2.0, make_vector({1.0, 2.0})).norm() == 0.0);
  // (x - x/(1+lambda))/lambda
  CHECK_THAT(yosida_eval(identity_operator(), 1.0, make_vector({2.0}))(0), WithinAbs((2.0 - 2.0 / 2.0) / 1.0, 1e-15));
  CHECK_THAT(yosida_eval(identity_operator(), 3.0, make_vector({2.0}))(0), WithinAbs(0.5, 1e-15));
  CHECK_THROWS_AS(yosida_eval(identity_operator(), 0.0, make_vector({2.0})), ParameterError);
}

TEST_CASE("forward-backward map examples", "[operator_core][fb]") {
  const auto zeroB = ops::affine_operator("zero", Matrix::Zero(2, 2), Vector::Zero(2), 1.0, 0.0);
  const Vector x = make_vector({0.3, -0.8});
  CHECK(fb_map(ops::zero_operator(), zeroB, 1.0, x) == x);

  const auto B = ops::gradient_of(functions::quadratic(Matrix::Identity(1, 1), make_vector({1.0})));
  CHECK_THAT(fb_map(halfline_cone(), B, 1.0, make_vector({1.0}))(0), WithinAbs(1.0, 1e-15));

  CHECK(fb_delta(1.0, 1.0) == 1.5);
  CHECK_THROWS_AS(fb_map(halfline_cone(), B, 2.5, make_vector({1.0})), ParameterError);
  CHECK_NOTHROW(fb_map(halfline_cone(), B, 2.5, make_vector({1.0}), true));
  const SingleValuedMap no_beta{"rot", [](const Vector& v) { return v; }, std::nullopt, 1.0, true};
  CHECK_THROWS_AS(fb_map(halfline_cone(), no_beta, 0.5, make_vector({1.0})), HypothesisError);
}

TEST_CASE("numeric prox examples", "[operator_core][prox_numeric]") {
  const Vector lo = Vector::Constant(1, -10.0), hi = Vector::Constant(1, 10.0);
  auto sq = [](const Vector& v) { return 0.5 * v.squaredNorm(); };
  CHECK_THAT(prox_numeric(sq, 1.0, make_vector({2.0}), lo, hi)(0), WithinAbs(1.0, 1e-8));
  auto absval = [](const Vector& v) { return std::abs(v(0)); };
  CHECK_THAT(prox_numeric(absval, 2.0, make_vector({5.0}), lo, hi)(0), WithinAbs(3.0, 1e-8));
  auto zero = [](const Vector&) { return 0.0; };
  CHECK_THAT(prox_numeric(zero, 1.0, make_vector({4.25}), lo, hi)(0), WithinAbs(4.25, 1e-10));

  // separable 2D instance against the closed form
  const Vector lo2 = Vector::Constant(2, -10.0), hi2 = Vector::Constant(2, 10.0);
  auto l1 = [](const Vector& v) { return 0.5 * v.lpNorm<1>(); };
  const Vector got = prox_numeric(l1, 1.5, make_vector({2.0, -0.3}), lo2, hi2);
  CHECK_THAT(got(0), WithinAbs(oracle::soft(2.0, 0.75), 1e-8));
  CHECK_THAT(got(1), WithinAbs(oracle::soft(-0.3, 0.75), 1e-8));

  NumericProxOptions tight;
  tight.max_iterations = 1;
  tight.tol = 1e-300;
  auto coupled = [](const Vector& v) { return std::pow(v(0) + v(1), 2) + v.squaredNorm(); };
  try {
    prox_numeric(coupled, 1.0, make_vector({3.0, -1.0}), lo2, hi2, tight);
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(std::isfinite(e.residual()));
  }
}

TEST_CASE("analytic proxes agree with a 1D search", "[operator_core][prox][property]") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-4.0, 4.0), g(0.1, 3.0);
  for (int k = 0; k < 50; ++k) {
    const double x = u(rng), gamma = g(rng);
    const auto check = [&](const ProxObject& f, const std::function<double(double)>& f1) {
      const double got = f.prox(gamma, make_vector({x}))(0);
      CHECK_THAT(got, WithinAbs(oracle::prox_1d(f1, gamma, x, -20.0, 20.0), 1e-6));
    };
    check(prox::l1(0.7), [](double y) { return 0.7 * std::abs(y); });
    check(prox::squared_l2(2.0), [](double y) { return y * y; });
    check(prox::box_indicator(1, -1.0, 0.5), [](double y) { return 1e6 * (std::max(0.0, -1.0 - y) + std::max(0.0, y - 0.5)); });
    check(prox::halfspace_indicator(make_vector({2.0}), 1.0), [](double y) { return 1e6 * std::max(0.0, 2.0 * y - 1.0); });
    check(prox::ball_indicator(make_vector({0.5}), 1.0), [](double y) { return 1e6 * std::max(0.0, std::abs(y - 0.5) - 1.0); });
    check(prox::l1_plus_separable_quadratic(0.4, make_vector({1.5}), make_vector({0.3})),
          [](double y) { return 0.4 * std::abs(y) + 0.75 * (y - 0.3) * (y - 0.3); });
  }
}

TEST_CASE("affine indicator projects onto the solution set", "[operator_core][prox]") {
  const Matrix M = (Matrix(1, 3) << 1.0, 1.0, 1.0).finished();
  const auto P = prox::affine_indicator(M, make_vector({3.0}));
  const Vector p = P.prox(1.0, make_vector({0.0, 0.0, 0.0}));
  CHECK((p - make_vector({1.0, 1.0, 1.0})).norm() < 1e-14);
  CHECK(P(p) == 0.0);
  CHECK(P(make_vector({0.0, 0.0, 0.0})) == kInfinity);
}

TEST_CASE("every resolvent is firmly nonexpansive", "[operator_core][property]") {
  std::mt19937_64 rng(3);
  const Matrix K = (Matrix(2, 2) << 0.0, 1.0, -1.0, 0.0).finished();
  const std::vector<std::pair<MonotoneMap, Eigen::Index>> cases{
      {ops::subdifferential(prox::l1(0.5)), 3},
      {ops::normal_cone(prox::box_indicator(3, -1.0, 2.0)), 3},
      {ops::normal_cone(prox::ball_indicator(Vector::Zero(3), 1.5)), 3},
      {ops::normal_cone(prox::halfspace_indicator(make_vector({1.0, -2.0, 0.5}), 0.3)), 3},
      {identity_operator(), 3},
      {ops::affine_monotone("skew", K, make_vector({0.1, 0.0}), std::nullopt, 1.0), 2},
  };
  for (const auto& [A, n] : cases)
    for (double gamma : {0.1, 1.0, 4.0}) {
      const SampleCheck r = check_firmly_nonexpansive(A, gamma, n, rng, 1000, 1e-10);
      INFO(A.name << " gamma=" << gamma);
      CHECK(r.pass);
    }
}

TEST_CASE("Moreau decomposition for the self-conjugate square norm", "[operator_core][property]") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  const auto g = prox::squared_l2(1.0);
  for (double c : {0.3, 1.0, 2.5})
    for (int k = 0; k < 100; ++k) {
      Vector x(4);
      for (int i = 0; i < 4; ++i) x(i) = nd(rng);
      // g* = g, so prox_{c g*}(x) = x / (1 + c)
      CHECK((prox_conjugate(g, c, x) - x / (1.0 + c)).norm() < 1e-10);
    }
}

TEST_CASE("Yosida regularization is 1/lambda-Lipschitz", "[operator_core][property]") {
  std::mt19937_64 rng(9);
  for (double lambda : {0.2, 1.0, 3.0}) {
    const auto A = ops::normal_cone(prox::box_indicator(2, 0.0, 1.0));
    const auto map = [A, lambda](const Vector& x) { return yosida_eval(A, lambda, x); };
    CHECK(check_lipschitz(map, 1.0 / lambda, 2, rng, 1000, 1e-10).pass);
  }
}

TEST_CASE("forward-backward map is 1/delta-averaged", "[operator_core][property]") {
  std::mt19937_64 rng(13);
  const Matrix M = (Matrix(2, 2) << 2.0, 0.5, 0.5, 1.0).finished();
  const auto g = functions::least_squares(M, make_vector({1.0, -1.0}));
  const auto B = ops::gradient_of(g);
  const auto A = ops::subdifferential(prox::l1(0.3));
  const double beta = *B.cocoercivity;
  for (double gamma : {0.3 * beta, beta, 1.9 * beta}) {
    const double delta = fb_delta(beta, gamma);
    // fb = (1 - 1/delta) Id + (1/delta) S  =>  S = delta fb - (delta - 1) Id
    const auto S = [&](const Vector& x) -> Vector { return delta * fb_map(A, B, gamma, x) - (delta - 1.0) * x; };
    CHECK(check_lipschitz(S, 1.0, 2, rng, 1000, 1e-8).pass);
  }
}

TEST_CASE("sampled operator checks detect violations", "[operator_core][checks]") {
  std::mt19937_64 rng(17);
  const auto g = functions::quadratic((Matrix(2, 2) << 3.0, 1.0, 1.0, 2.0).finished(), make_vector({1.0, 0.0}));
  CHECK(check_gradient(g, make_vector({0.4, -1.2})).pass);
  SmoothFunction wrong = g;
  wrong.gradient = [](const Vector& x) { return Vector(2.0 * x); };
  CHECK_FALSE(check_gradient(wrong, make_vector({0.4, -1.2})).pass);

  CHECK(check_cocoercive(ops::gradient_of(g), 2, rng).pass);
  SingleValuedMap overclaimed = ops::gradient_of(g);
  overclaimed.cocoercivity = 1.0;
  CHECK_FALSE(check_cocoercive(overclaimed, 2, rng).pass);

  const Matrix A = (Matrix(3, 2) << 1.0, 2.0, 0.0, -1.0, 3.0, 0.5).finished();
  const LinearMap L = linear_map_from_matrix(A);
  CHECK(check_adjoint(L, rng).pass);
  CHECK_THAT(L.norm_estimate, WithinRel(Eigen::JacobiSVD<Matrix>(A).singularValues()(0), 1e-11));
}

TEST_CASE("vector validation", "[operator_core]") {
  CHECK_THROWS_AS(make_vector({}), ParameterError);
  CHECK_THROWS_AS(make_vector({1.0, std::nan("")}), ParameterError);
  CHECK_THROWS_AS(prox::l1(-1.0), ParameterError);
}
