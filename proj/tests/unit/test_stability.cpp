#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <nlohmann/json.hpp>

#include "linear_gaussian.hpp"
#include "pcdpem/errors.hpp"
#include "pcdpem/rng.hpp"
#include "pcdpem/stability.hpp"

using namespace pcdpem;
using pcdpem::testing::linear_gaussian_model;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

Vector theta_a(double a) {
  Vector th(4);
  th << a, 1.0, 0.1, 0.1;
  return th;
}

std::vector<Witness> points(std::initializer_list<double> xs) {
  std::vector<Witness> w;
  for (double x : xs) w.push_back({Vector::Constant(1, x), Vector()});
  return w;
}

// x' = A x with A = [[a, b], [c, d]], theta = [a, b, c, d, s, w]
ModelClass linear2_model() {
  ModelClass m;
  m.name = "linear2";
  m.state_dim = 2;
  m.param_names = {"a", "b", "c", "d", "s", "w"};
  m.transition = [](const double* x, const double*, double* off, double* d) {
    off[0] = off[1] = 0.0;
    for (int i = 0; i < 12; ++i) d[i] = 0.0;
    d[0] = x[0];
    d[1] = x[1];
    d[6 + 2] = x[0];
    d[6 + 3] = x[1];
  };
  m.observation = [](const double* x, const double*, double* off, double* d) {
    off[0] = x[0];
    for (int i = 0; i < 6; ++i) d[i] = 0.0;
  };
  m.noise.process_var_index = 4;
  m.noise.measurement_var_index = 5;
  m.initial_mean = Vector::Zero(2);
  return m;
}

StabilityCertificate cert(double p, double kappa) {
  StabilityCertificate c;
  c.P = scalar(p);
  c.kappa = kappa;
  return c;
}

}  // namespace

TEST_CASE("scalar contraction examples") {
  const auto m = linear_gaussian_model(0.5, 1.0, 0.1, 0.1);
  const auto w = points({-2.0, 0.0, 3.0});
  CHECK(schur_margin(scalar(0.5), scalar(1.0), 0.5) == doctest::Approx(0.25));
  const auto ok = check_contraction(m, theta_a(0.5), cert(1.0, 0.5), w);
  CHECK(ok.ok);
  CHECK(ok.schur_margin == doctest::Approx(0.25).epsilon(1e-6));
  const auto bad = check_contraction(m, theta_a(1.0), cert(1.0, 0.5), w);
  CHECK_FALSE(bad.ok);
  CHECK(bad.schur_margin == doctest::Approx(-0.5).epsilon(1e-6));

  const auto zero = check_contraction(m, theta_a(0.0), cert(1.0, 1.0), w);
  CHECK(zero.ok);
  CHECK(zero.margin == doctest::Approx(0.0).scale(1.0));

  CHECK_THROWS_AS(check_contraction(m, theta_a(0.5), cert(1.0, 2.5), w), ParameterError);
  CHECK_THROWS_AS(check_contraction(m, theta_a(0.5), cert(-1.0, 0.5), w), ParameterError);
}

TEST_CASE("differential Jacobians") {
  const auto m = linear_gaussian_model(0.7, 1.0, 0.1, 0.1);
  for (double x : {-3.0, 0.0, 12.0}) {
    CHECK(differential_jacobian(m, theta_a(0.7), Vector::Constant(1, x))(0, 0) == doctest::Approx(0.7).epsilon(1e-6));
    CHECK(differential_jacobian(m, theta_a(0.0), Vector::Constant(1, x))(0, 0) == doctest::Approx(0.0).scale(1.0));
  }
  const auto bm = benchmark_system();
  const Vector u = Vector::Constant(1, 0.3);
  CHECK(differential_jacobian(bm.model, bm.model.true_theta, Vector::Zero(1), u)(0, 0) ==
        doctest::Approx(25.5).epsilon(1e-6));
  Vector z = bm.model.true_theta;
  z.head(4).setZero();
  CHECK(std::abs(differential_jacobian(bm.model, z, Vector::Constant(1, 1.7), u)(0, 0)) < 1e-9);

  const auto fhn = fitzhugh_nagumo_system();
  const Vector x = fhn.x0;
  CHECK(differential_jacobian(fhn.model, fhn.model.true_theta, x)
            .isApprox(differential_jacobian_central(fhn.model, fhn.model.true_theta, x), 1e-5));
}

TEST_CASE("certificate search on scalar linear maps") {
  const auto m = linear_gaussian_model(0.5, 1.0, 0.1, 0.1);
  const auto w = points({0.0, 1.0});
  const auto half = fit_certificate(m, theta_a(0.5), w);
  REQUIRE(half.has_value());
  const double p = half->P(0, 0);
  CHECK(0.25 <= (2.0 - half->kappa - p) * p + 1e-9);
  CHECK(check_contraction(m, theta_a(0.5), *half, w).ok);

  const auto zero = fit_certificate(m, theta_a(0.0), w);
  REQUIRE(zero.has_value());
  CHECK(check_contraction(m, theta_a(0.0), *zero, w).ok);

  CHECK_FALSE(fit_certificate(m, theta_a(1.5), w).has_value());
  CHECK_FALSE(fit_certificate(m, theta_a(-1.01), w).has_value());

  const ContractionProblem prob(m, w);
  CHECK(prob.feasible(theta_a(0.99)));
  CHECK_FALSE(prob.feasible(theta_a(1.01)));
}

TEST_CASE("block and reduced forms agree with the analytic condition") {
  Rng rng(2024);
  std::uniform_real_distribution<double> th(-2.0, 2.0), pp(0.01, 2.5), kk(0.001, 1.999);
  int compared = 0;
  for (int i = 0; i < 1000; ++i) {
    const double t = th(rng), p = pp(rng), k = kk(rng);
    const double analytic = (2.0 - k - p) * p - t * t;  // scaled Schur complement
    if (std::abs(analytic) < 1e-9) continue;
    const double s = schur_margin(scalar(t), scalar(p), k);
    const double b = block_margin(scalar(t), scalar(p), k);
    CHECK((s >= 0) == (analytic >= 0));
    CHECK((b >= -kPsdSlack) == (analytic >= 0));
    ++compared;
  }
  CHECK(compared > 990);
}

TEST_CASE("shrinking kappa keeps feasibility") {
  Rng rng(5);
  std::uniform_real_distribution<double> th(-1.0, 1.0), pp(0.1, 1.9);
  for (int i = 0; i < 200; ++i) {
    const double t = th(rng), p = pp(rng);
    for (double k : {1.5, 1.0, 0.5, 0.1, 1e-3}) {
      if (schur_margin(scalar(t), scalar(p), k) >= 0) {
        CHECK(schur_margin(scalar(t), scalar(p), k / 2) >= 0);
      }
    }
  }
}

TEST_CASE("certified maps dissipate the incremental energy") {
  const ModelClass m = linear2_model();
  Vector th(6);
  th << 0.5, 0.3, -0.2, 0.6, 0.1, 0.1;
  std::vector<Witness> w;
  for (double a : {-2.0, 0.0, 1.5})
    for (double b : {-3.0, 0.0, 2.0}) w.push_back({(Vector(2) << a, b).finished(), Vector()});
  const auto c = fit_certificate(m, th, w);
  REQUIRE(c.has_value());
  CHECK(check_contraction(m, th, *c, w).ok);
  const Matrix Pinv = c->P.inverse();
  Rng rng(3);
  std::normal_distribution<double> N(0, 1);
  for (const auto& wi : w) {
    const Matrix F = differential_jacobian(m, th, wi.x);
    for (int r = 0; r < 50; ++r) {
      const Vector d = (Vector(2) << N(rng), N(rng)).finished();
      const Vector fd = F * d;
      const double lhs = fd.dot(Pinv * fd) + d.dot(c->P * d) - 2.0 * d.squaredNorm();
      CHECK(lhs <= -c->kappa * d.squaredNorm() + 1e-8);
    }
  }
}

TEST_CASE("witness boxes and certificate JSON") {
  const auto box = box_witnesses(Vector::Constant(2, -1.0), Vector::Constant(2, 1.0), 3);
  CHECK(box.size() == 9);
  const auto m = linear_gaussian_model(0.5, 1.0, 0.1, 0.1);
  const auto c = fit_certificate(m, theta_a(0.3), points({0.0}));
  REQUIRE(c.has_value());
  const auto j = to_json(*c);
  CHECK(j.contains("kappa"));
  CHECK(j.at("witness_count").get<std::size_t>() == 1);
}

TEST_CASE("every theta accepted by the feasibility test gets a certificate") {
  const ModelClass m = linear2_model();
  std::vector<Witness> w{{Vector::Zero(2), Vector()}};
  const ContractionProblem problem(m, w);
  Rng rng(17);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<Vector> accepted;
  for (int i = 0; i < 400; ++i) {
    Vector th(6);
    th << U(rng), U(rng), U(rng), U(rng), 0.1, 0.1;
    // push toward the feasibility boundary
    const Eigen::Matrix2d A = (Eigen::Matrix2d() << th[0], th[1], th[2], th[3]).finished();
    th.head(4) /= A.operatorNorm() * (0.95 + 0.1 * (U(rng) + 1.0) / 2.0);
    if (problem.feasible(th)) accepted.push_back(th);
  }
  REQUIRE(accepted.size() > 50);
  for (const Vector& th : accepted) {
    const auto c = problem.fit(th);
    REQUIRE(c.has_value());
    CHECK(check_contraction(m, th, *c, w).ok);
  }
}
