#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ciac/errors.hpp"

namespace ciac {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;

inline constexpr double kDegPerRad = 180.0 / std::numbers::pi;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

// Proper rotation. Construction from an arbitrary matrix validates
// orthonormality and det = +1; products of valid rotations are trusted.
template <typename Scalar>
class Rot3 {
 public:
  using Matrix = Mat3<Scalar>;

  Rot3() : m_(Matrix::Identity()) {}

  explicit Rot3(const Matrix& m, Scalar tol = Scalar(1e-9)) : m_(m) {
    if (!m.allFinite()) throw ConfigError("Rot3: non-finite entries");
    const Scalar ortho = (m.transpose() * m - Matrix::Identity()).cwiseAbs().maxCoeff();
    if (ortho > tol) throw ConfigError("Rot3: matrix is not orthonormal");
    if (std::abs(m.determinant() - Scalar(1)) > tol)
      throw ConfigError("Rot3: determinant is not +1");
  }

  static Rot3 from_row_major(std::span<const Scalar, 9> v, Scalar tol = Scalar(1e-9)) {
    Matrix m;
    m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
    return Rot3(m, tol);
  }

  static Rot3 from_quaternion(const Eigen::Quaternion<Scalar>& q) {
    return Rot3(Trusted{}, q.normalized().toRotationMatrix());
  }

  static Rot3 axis_angle(const Vec3<Scalar>& axis, Scalar angle) {
    return Rot3(Trusted{}, Eigen::AngleAxis<Scalar>(angle, axis.normalized()).toRotationMatrix());
  }

  static Rot3 about_x(Scalar a) { return axis_angle(Vec3<Scalar>::UnitX(), a); }
  static Rot3 about_y(Scalar a) { return axis_angle(Vec3<Scalar>::UnitY(), a); }
  static Rot3 about_z(Scalar a) { return axis_angle(Vec3<Scalar>::UnitZ(), a); }

  const Matrix& matrix() const { return m_; }
  Vec3<Scalar> axis(int i) const { return m_.col(i); }
  Eigen::Quaternion<Scalar> quaternion() const { return Eigen::Quaternion<Scalar>(m_); }

  Rot3 inverse() const { return Rot3(Trusted{}, m_.transpose()); }
  Rot3 operator*(const Rot3& o) const { return Rot3(Trusted{}, m_ * o.m_); }
  Vec3<Scalar> operator*(const Vec3<Scalar>& v) const { return m_ * v; }

  std::array<Scalar, 9> row_major() const {
    return {m_(0, 0), m_(0, 1), m_(0, 2), m_(1, 0), m_(1, 1), m_(1, 2), m_(2, 0), m_(2, 1), m_(2, 2)};
  }

  // Geodesic distance in radians.
  Scalar angle_to(const Rot3& o) const {
    const Eigen::AngleAxis<Scalar> aa(m_.transpose() * o.m_);
    return std::abs(aa.angle());
  }

  template <typename Other>
  Rot3<Other> cast() const {
    return Rot3<Other>::from_quaternion(quaternion().template cast<Other>());
  }

 private:
  struct Trusted {};
  Rot3(Trusted, const Matrix& m) : m_(m) {}

  Matrix m_;
};

using Rot3d = Rot3<double>;

template <typename Scalar>
struct Pose {
  Vec3<Scalar> position = Vec3<Scalar>::Zero();
  Rot3<Scalar> orientation;
};

using Posed = Pose<double>;

enum class DeviceId : int { PSM1 = 0, PSM2 = 1, SIGMA_R = 2, SIGMA_L = 3 };

inline constexpr std::array<DeviceId, 4> kAllDevices = {DeviceId::PSM1, DeviceId::PSM2,
                                                        DeviceId::SIGMA_R, DeviceId::SIGMA_L};

std::string_view device_name(DeviceId id);

// One 20 Hz frame of a device: 19 numeric features plus a timestamp.
struct KinematicSample {
  static constexpr std::size_t kFeatureCount = 19;

  DeviceId device = DeviceId::PSM1;
  Vec3d position = Vec3d::Zero();
  Rot3d orientation;
  Vec3d linear_velocity = Vec3d::Zero();
  Vec3d angular_velocity = Vec3d::Zero();
  double gripper_angle = 0.0;
  double timestamp = 0.0;

  // position(3), rotation row-major(9), linear velocity(3), angular velocity(3), gripper(1)
  std::array<double, kFeatureCount> features() const;
  static KinematicSample from_features(DeviceId device, std::span<const double, kFeatureCount> f,
                                       double timestamp);
};

// Tissue-attached frame: x along the wound, y across it in-plane, z the outward normal.
template <typename Scalar>
struct TaskFrame {
  Vec3<Scalar> origin = Vec3<Scalar>::Zero();
  Rot3<Scalar> orientation;
};

using TaskFramed = TaskFrame<double>;

template <typename Scalar>
Vec3<Scalar> to_task_frame(const Vec3<Scalar>& p_world, const TaskFrame<Scalar>& f) {
  return f.orientation.matrix().transpose() * (p_world - f.origin);
}

template <typename Scalar>
Vec3<Scalar> from_task_frame(const Vec3<Scalar>& p_task, const TaskFrame<Scalar>& f) {
  return f.orientation.matrix() * p_task + f.origin;
}

template <typename Scalar>
Rot3<Scalar> to_task_frame(const Rot3<Scalar>& r_world, const TaskFrame<Scalar>& f) {
  return f.orientation.inverse() * r_world;
}

template <typename Scalar>
Rot3<Scalar> from_task_frame(const Rot3<Scalar>& r_task, const TaskFrame<Scalar>& f) {
  return f.orientation * r_task;
}

// Angle in degrees between the needle-plane normal (tool x axis) and the wound
// direction (task x axis). 0 means the needle plane is perpendicular to the wound.
template <typename Scalar>
Scalar perpendicularity_error(const Rot3<Scalar>& tool_world, const TaskFrame<Scalar>& f) {
  const Vec3<Scalar> a = tool_world.axis(0);
  const Vec3<Scalar> b = f.orientation.axis(0);
  return std::atan2(a.cross(b).norm(), a.dot(b)) * Scalar(kDegPerRad);
}

// Planned needle insertion points in task coordinates, ordered along +x.
class EntryPointSet {
 public:
  EntryPointSet() = default;
  explicit EntryPointSet(std::vector<Vec3d> points, std::size_t current = 0);

  std::size_t size() const { return points_.size(); }
  std::size_t current_index() const { return current_; }
  const std::vector<Vec3d>& points() const { return points_; }

  const Vec3d& current() const { return points_[current_]; }
  // x_{j+1}; clamps to the last point when j is the final index.
  const Vec3d& next() const;
  bool next_is_clamped() const { return current_ + 1 >= points_.size(); }

  // Advances j; returns false (and stays) when already at the last point.
  bool advance();
  void reset(std::size_t j = 0);

 private:
  std::vector<Vec3d> points_;
  std::size_t current_ = 0;
};

}  // namespace ciac
