#include <doctest.h>

#include <random>
#include <vector>

#include "ciac/intent_estimator.hpp"
#include "test_util.hpp"

using namespace ciac;

TEST_CASE("force vanishes at equilibrium") {
  const auto imp = Impedanced::defaults();
  const Vec3d tau(0.01, 0.02, -0.03);
  CHECK(operator_force(tau, tau, Vec3d::Zero().eval(), imp).norm() == 0.0);
}

TEST_CASE("unit stiffness without motion gives tau = x + u") {
  const Impedanced imp(Mat3d::Identity(), Mat3d::Identity());
  const Vec3d x(1, 2, 3), u(0.5, -0.5, 0.25);
  CHECK((pseudo_measurement(u, x, Vec3d::Zero().eval(), imp) - (x + u)).norm() == doctest::Approx(0.0));
}

TEST_CASE("pseudo-measurement inverts the forward model") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(1.0, 200.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    // Random SPD stiffness and viscosity.
    const Rot3d r = test::random_rotation(rng);
    const Mat3d l1 = r.matrix() * Vec3d(d(rng), d(rng), d(rng)).asDiagonal() * r.matrix().transpose();
    const Mat3d l2 = Vec3d(d(rng), d(rng), d(rng)).asDiagonal();
    const Impedanced imp(l1, l2);
    const Vec3d tau = test::random_vec(rng, 0.1), x = test::random_vec(rng, 0.1), v = test::random_vec(rng, 0.05);
    const Vec3d u = operator_force(tau, x, v, imp);
    worst = std::max(worst, (pseudo_measurement(u, x, v, imp) - tau).norm());
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("impedance rejects non positive definite gains") {
  CHECK_THROWS_AS(Impedanced(Mat3d::Zero(), Mat3d::Identity()), ConfigError);
  CHECK_THROWS_AS(Impedanced(Mat3d::Identity(), -Mat3d::Identity()), ConfigError);
}

TEST_CASE("vanishing measurement noise tracks the measurement") {
  KalmanConfigd cfg;
  cfg.measurement_noise = Mat3d::Identity() * 1e-12;
  auto s = IntentEstimated::start(Vec3d::Zero(), cfg);
  const Vec3d z(0.03, -0.01, 0.02);
  s = kf_step(s, z, cfg);
  CHECK((s.tau_h_hat - z).norm() < 1e-9);
}

TEST_CASE("covariance matches the closed form with no process noise") {
  KalmanConfigd cfg;
  cfg.process_noise.setZero();
  cfg.maneuver_gate = 0.0;
  const double r = cfg.measurement_noise(0, 0), p0 = cfg.initial_covariance(0, 0);
  auto s = IntentEstimated::start(Vec3d::Zero(), cfg);
  std::mt19937_64 rng(9);
  for (int k = 1; k <= 300; ++k) {
    s = kf_step(s, test::random_vec(rng, 0.01), cfg);
    const double expected = p0 * r / (r + k * p0);
    CHECK(s.covariance(1, 1) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("steady-state covariance solves the scalar Riccati equation") {
  const KalmanConfigd cfg;
  const double q = cfg.process_noise(0, 0), r = cfg.measurement_noise(0, 0);
  // Prior M satisfies M^2 - qM - qr = 0; posterior is M - q.
  const double prior = 0.5 * (q + std::sqrt(q * q + 4 * q * r));
  auto s = IntentEstimated::start(Vec3d::Zero(), cfg);
  for (int k = 0; k < 200; ++k) s = kf_step(s, Vec3d::Zero().eval(), cfg);
  CHECK(s.covariance(0, 0) == doctest::Approx(prior - q).epsilon(1e-9));
  CHECK(std::sqrt(s.covariance(2, 2)) == doctest::Approx(2.86e-3).epsilon(0.01));
}

TEST_CASE("small process noise recovers a static target under tremor") {
  const auto imp = Impedanced::defaults();
  KalmanConfigd cfg;
  cfg.process_noise = Mat3d::Identity() * (0.02e-3 * 0.02e-3);
  int converged = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::normal_distribution<double> tremor(0.0, 5e-3);
    const Vec3d tau = test::random_vec(rng, 0.06);
    IntentEstimatord est(imp, cfg);
    Vec3d x = test::random_vec(rng, 0.06);
    Vec3d v = Vec3d::Zero();
    for (int k = 0; k < 200; ++k) {
      // Hand drifts toward the target; force carries tremor on the commanded target.
      const Vec3d noisy(tau.x() + tremor(rng), tau.y() + tremor(rng), tau.z() + tremor(rng));
      const Vec3d u = operator_force(noisy, x, v, imp);
      est.step({u, x, v, k * 0.05});
      v = 0.5 * (tau - x);
      x += v * 0.05;
    }
    if ((est.estimate().tau_h_hat - tau).norm() < 1e-3) ++converged;
  }
  CHECK(converged >= 95);
}

TEST_CASE("step change in target is tracked after the gate re-opens") {
  KalmanConfigd cfg;
  cfg.process_noise = Mat3d::Identity() * (0.02e-3 * 0.02e-3);
  cfg.maneuver_gate = 25.0;
  auto s = IntentEstimated::start(Vec3d::Zero(), cfg);
  for (int k = 0; k < 300; ++k) s = kf_step(s, Vec3d(0.01, 0, 0).eval(), cfg);
  CHECK((s.tau_h_hat - Vec3d(0.01, 0, 0)).norm() < 1e-6);
  CHECK_FALSE(s.maneuver);
  bool gated = false;
  for (int k = 0; k < 20; ++k) {
    s = kf_step(s, Vec3d(0.05, 0, 0).eval(), cfg);
    gated = gated || s.maneuver;
  }
  CHECK(gated);
  CHECK((s.tau_h_hat - Vec3d(0.05, 0, 0)).norm() < 1e-3);
}

TEST_CASE("covariance stays symmetric positive semi-definite") {
  KalmanConfigd cfg;
  cfg.process_noise << 4e-6, 1e-6, 0, 1e-6, 3e-6, 0, 0, 0, 2e-6;
  auto s = IntentEstimated::start(Vec3d::Zero(), cfg);
  std::mt19937_64 rng(17);
  for (int k = 0; k < 2000; ++k) {
    Vec3d z = test::random_vec(rng, 0.05);
    if (k % 97 == 0) z.x() = std::nan("");
    s = kf_step(s, z, cfg);
    CHECK((s.covariance - s.covariance.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Mat3d> es(s.covariance);
    CHECK(es.eigenvalues().minCoeff() >= 0.0);
  }
}

TEST_CASE("non-finite measurement predicts only") {
  const KalmanConfigd cfg;
  const auto s0 = IntentEstimated::start(Vec3d(1, 2, 3), cfg);
  const auto s1 = kf_step(s0, Vec3d(std::nan(""), 0, 0), cfg);
  CHECK(s1.skipped);
  CHECK(s1.tau_h_hat == s0.tau_h_hat);
  CHECK((s1.covariance - (s0.covariance + cfg.process_noise)).norm() == 0.0);
}

TEST_CASE("estimator is translation equivariant") {
  const auto imp = Impedanced::defaults();
  const KalmanConfigd cfg;
  const Vec3d shift(0.1, -0.2, 0.05);
  std::mt19937_64 rng(21);
  std::vector<InteractionSampled> a, b;
  for (int k = 0; k < 100; ++k) {
    const Vec3d x = test::random_vec(rng, 0.05), v = test::random_vec(rng, 0.01);
    const Vec3d u = test::random_vec(rng, 2.0);
    a.push_back({u, x, v, k * 0.05});
    b.push_back({u, x + shift, v, k * 0.05});
  }
  const auto ea = estimate_intent<double>(a, imp, cfg);
  const auto eb = estimate_intent<double>(b, imp, cfg);
  for (std::size_t k = 0; k < ea.size(); ++k) CHECK((eb[k].tau_h_hat - ea[k].tau_h_hat - shift).norm() < 1e-12);
}

TEST_CASE("diagonal filter equals three scalar filters") {
  KalmanConfigd cfg;
  cfg.maneuver_gate = 0.0;
  cfg.process_noise = Vec3d(1e-6, 4e-6, 9e-6).asDiagonal();
  cfg.measurement_noise = Vec3d(2e-5, 3e-5, 4e-5).asDiagonal();
  auto s = IntentEstimated::start(Vec3d::Zero(), cfg);
  double xs[3] = {0, 0, 0}, ps[3];
  for (int i = 0; i < 3; ++i) ps[i] = cfg.initial_covariance(i, i);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 500; ++k) {
    const Vec3d z = test::random_vec(rng, 0.02);
    s = kf_step(s, z, cfg);
    for (int i = 0; i < 3; ++i) {
      const double pm = ps[i] + cfg.process_noise(i, i);
      const double g = pm / (pm + cfg.measurement_noise(i, i));
      xs[i] += g * (z[i] - xs[i]);
      ps[i] = (1 - g) * pm;
      CHECK(s.tau_h_hat[i] == doctest::Approx(xs[i]).epsilon(1e-10));
      CHECK(s.covariance(i, i) == doctest::Approx(ps[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("timestamps must increase") {
  std::vector<InteractionSampled> v(2);
  v[0].timestamp = 1.0;
  v[1].timestamp = 1.0;
  CHECK_THROWS_AS(estimate_intent<double>(v, Impedanced::defaults(), KalmanConfigd{}), ConfigError);
}
