#pragma once

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "ciac/errors.hpp"
#include "ciac/kinematics.hpp"

namespace ciac {

// Operator impedance u_h = -L1 (x - tau) - L2 xdot.
template <typename Scalar>
class Impedance {
 public:
  using Matrix = Mat3<Scalar>;

  Impedance(const Matrix& stiffness, const Matrix& viscosity)
      : stiffness_(stiffness), viscosity_(viscosity) {
    require_positive_definite(stiffness_, "stiffness");
    require_positive_definite(viscosity_, "viscosity");
    const Eigen::FullPivLU<Matrix> lu(stiffness_);
    if (!lu.isInvertible()) throw ConfigError("Impedance: stiffness is singular");
    stiffness_inv_ = lu.inverse();
  }

  // L1 = 120 N/m, L2 = 15 N s/m per axis.
  static Impedance defaults() {
    return Impedance(Matrix::Identity() * Scalar(120), Matrix::Identity() * Scalar(15));
  }

  const Matrix& stiffness() const { return stiffness_; }
  const Matrix& viscosity() const { return viscosity_; }
  const Matrix& stiffness_inverse() const { return stiffness_inv_; }

 private:
  static void require_positive_definite(const Matrix& m, const char* name) {
    if (!m.allFinite()) throw ConfigError(std::string("Impedance: non-finite ") + name);
    const Matrix sym = Scalar(0.5) * (m + m.transpose());
    const Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > Scalar(0)))
      throw ConfigError(std::string("Impedance: ") + name + " is not positive definite");
  }

  Matrix stiffness_;
  Matrix viscosity_;
  Matrix stiffness_inv_;
};

using Impedanced = Impedance<double>;

// Forward model: force an operator with target tau applies at state (x, xdot).
template <typename Scalar>
Vec3<Scalar> operator_force(const Vec3<Scalar>& tau, const Vec3<Scalar>& x, const Vec3<Scalar>& xdot,
                            const Impedance<Scalar>& imp) {
  return -imp.stiffness() * (x - tau) - imp.viscosity() * xdot;
}

// Algebraic inversion of the impedance model: tau = x + L1^-1 (u_h + L2 xdot).
template <typename Scalar>
Vec3<Scalar> pseudo_measurement(const Vec3<Scalar>& u_h, const Vec3<Scalar>& x, const Vec3<Scalar>& xdot,
                                const Impedance<Scalar>& imp) {
  return x + imp.stiffness_inverse() * (u_h + imp.viscosity() * xdot);
}

template <typename Scalar>
struct KalmanConfig {
  using Matrix = Mat3<Scalar>;

  Matrix process_noise = Matrix::Identity() * Scalar(2e-3 * 2e-3);       // Q, m^2 per step
  Matrix measurement_noise = Matrix::Identity() * Scalar(5e-3 * 5e-3);    // R, m^2
  Matrix initial_covariance = Matrix::Identity() * Scalar(50e-3 * 50e-3);  // P0, m^2
  // Normalized innovation above which the target is treated as having moved and the
  // covariance is re-opened by P0. Zero disables.
  Scalar maneuver_gate = Scalar(0);

  void validate() const {
    check_psd(process_noise, "process_noise");
    check_psd(measurement_noise, "measurement_noise");
    check_psd(initial_covariance, "initial_covariance");
    if (!(maneuver_gate >= Scalar(0))) throw ConfigError("KalmanConfig: maneuver_gate must be >= 0");
  }

 private:
  static void check_psd(const Matrix& m, const char* name) {
    if (!m.allFinite()) throw ConfigError(std::string("KalmanConfig: non-finite ") + name);
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12) * (Scalar(1) + m.cwiseAbs().maxCoeff()))
      throw ConfigError(std::string("KalmanConfig: ") + name + " is not symmetric");
    const Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < Scalar(0))
      throw ConfigError(std::string("KalmanConfig: ") + name + " is not positive semi-definite");
  }
};

using KalmanConfigd = KalmanConfig<double>;

template <typename Scalar>
struct IntentEstimate {
  Vec3<Scalar> tau_h_hat = Vec3<Scalar>::Zero();
  Mat3<Scalar> covariance = Mat3<Scalar>::Zero();
  Vec3<Scalar> innovation = Vec3<Scalar>::Zero();
  Scalar timestamp = Scalar(0);
  bool skipped = false;   // measurement was non-finite; predict only
  bool maneuver = false;  // covariance re-opened by the innovation gate

  static IntentEstimate start(const Vec3<Scalar>& position, const KalmanConfig<Scalar>& cfg,
                              Scalar timestamp = Scalar(0)) {
    IntentEstimate e;
    e.tau_h_hat = position;
    e.covariance = cfg.initial_covariance;
    e.timestamp = timestamp;
    return e;
  }
};

using IntentEstimated = IntentEstimate<double>;

// Random-walk predict followed by a direct-observation update.
template <typename Scalar>
IntentEstimate<Scalar> kf_step(const IntentEstimate<Scalar>& state, const Vec3<Scalar>& measurement,
                               const KalmanConfig<Scalar>& cfg) {
  using Matrix = Mat3<Scalar>;
  IntentEstimate<Scalar> next = state;
  next.skipped = false;
  next.maneuver = false;

  Matrix prior = state.covariance + cfg.process_noise;
  if (!measurement.allFinite()) {
    next.covariance = prior;
    next.innovation.setZero();
    next.skipped = true;
    return next;
  }

  const Vec3<Scalar> innovation = measurement - state.tau_h_hat;
  Matrix s = prior + cfg.measurement_noise;
  if (cfg.maneuver_gate > Scalar(0)) {
    const Scalar nis = innovation.dot(s.ldlt().solve(innovation));
    if (nis > cfg.maneuver_gate) {
      prior += cfg.initial_covariance;
      s = prior + cfg.measurement_noise;
      next.maneuver = true;
    }
  }

  // K = P- S^-1 (both symmetric).
  const Matrix gain = s.ldlt().solve(prior).transpose();
  const Matrix i_minus_k = Matrix::Identity() - gain;
  Matrix post = i_minus_k * prior * i_minus_k.transpose() + gain * cfg.measurement_noise * gain.transpose();
  post = Scalar(0.5) * (post + post.transpose());
  post.template triangularView<Eigen::StrictlyLower>() = post.transpose();

  next.tau_h_hat = state.tau_h_hat + gain * innovation;
  next.covariance = post;
  next.innovation = innovation;
  return next;
}

template <typename Scalar>
struct InteractionSample {
  Vec3<Scalar> force = Vec3<Scalar>::Zero();  // u_h, N
  Vec3<Scalar> position = Vec3<Scalar>::Zero();
  Vec3<Scalar> velocity = Vec3<Scalar>::Zero();
  Scalar timestamp = Scalar(0);
};

using InteractionSampled = InteractionSample<double>;

// Streaming estimator for one manipulator. The first sample initializes the
// estimate at the current position.
template <typename Scalar>
class IntentEstimator {
 public:
  IntentEstimator(const Impedance<Scalar>& imp, const KalmanConfig<Scalar>& cfg) : imp_(imp), cfg_(cfg) {
    cfg_.validate();
  }

  const IntentEstimate<Scalar>& step(const InteractionSample<Scalar>& s) {
    if (!state_) state_ = IntentEstimate<Scalar>::start(s.position, cfg_, s.timestamp);
    const Vec3<Scalar> z = pseudo_measurement(s.force, s.position, s.velocity, imp_);
    state_ = kf_step(*state_, z, cfg_);
    state_->timestamp = s.timestamp;
    return *state_;
  }

  bool initialized() const { return state_.has_value(); }
  const IntentEstimate<Scalar>& estimate() const { return *state_; }
  void reset() { state_.reset(); }
  const Impedance<Scalar>& impedance() const { return imp_; }
  const KalmanConfig<Scalar>& config() const { return cfg_; }

 private:
  Impedance<Scalar> imp_;
  KalmanConfig<Scalar> cfg_;
  std::optional<IntentEstimate<Scalar>> state_;
};

using IntentEstimatord = IntentEstimator<double>;

template <typename Scalar>
std::vector<IntentEstimate<Scalar>> estimate_intent(std::span<const InteractionSample<Scalar>> stream,
                                                    const Impedance<Scalar>& imp,
                                                    const KalmanConfig<Scalar>& cfg) {
  IntentEstimator<Scalar> est(imp, cfg);
  std::vector<IntentEstimate<Scalar>> out;
  out.reserve(stream.size());
  Scalar last_t = -std::numeric_limits<Scalar>::infinity();
  for (const auto& s : stream) {
    if (!(s.timestamp > last_t)) throw ConfigError("estimate_intent: timestamps must increase");
    last_t = s.timestamp;
    out.push_back(est.step(s));
  }
  return out;
}

}  // namespace ciac
