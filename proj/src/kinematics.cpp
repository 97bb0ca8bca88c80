#include "ciac/kinematics.hpp"

namespace ciac {

std::string_view device_name(DeviceId id) {
  switch (id) {
    case DeviceId::PSM1: return "PSM1";
    case DeviceId::PSM2: return "PSM2";
    case DeviceId::SIGMA_R: return "SIGMA_R";
    case DeviceId::SIGMA_L: return "SIGMA_L";
  }
  return "?";
}

std::array<double, KinematicSample::kFeatureCount> KinematicSample::features() const {
  std::array<double, kFeatureCount> f{};
  std::size_t k = 0;
  for (int i = 0; i < 3; ++i) f[k++] = position[i];
  for (double r : orientation.row_major()) f[k++] = r;
  for (int i = 0; i < 3; ++i) f[k++] = linear_velocity[i];
  for (int i = 0; i < 3; ++i) f[k++] = angular_velocity[i];
  f[k] = gripper_angle;
  return f;
}

KinematicSample KinematicSample::from_features(DeviceId device,
                                               std::span<const double, kFeatureCount> f,
                                               double timestamp) {
  KinematicSample s;
  s.device = device;
  s.position = Vec3d(f[0], f[1], f[2]);
  // Recorded rotations carry float-level noise; accept them at a loose tolerance.
  s.orientation = Rot3d::from_row_major(f.subspan<3, 9>(), 1e-4);
  s.linear_velocity = Vec3d(f[12], f[13], f[14]);
  s.angular_velocity = Vec3d(f[15], f[16], f[17]);
  s.gripper_angle = f[18];
  s.timestamp = timestamp;
  return s;
}

EntryPointSet::EntryPointSet(std::vector<Vec3d> points, std::size_t current)
    : points_(std::move(points)), current_(current) {
  if (points_.empty()) throw ConfigError("EntryPointSet: no points");
  if (current_ >= points_.size()) throw ConfigError("EntryPointSet: index out of range");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!points_[i].allFinite()) throw ConfigError("EntryPointSet: non-finite point");
    if (i > 0 && !(points_[i].x() > points_[i - 1].x()))
      throw ConfigError("EntryPointSet: points must be strictly increasing along x");
  }
}

const Vec3d& EntryPointSet::next() const {
  return next_is_clamped() ? points_.back() : points_[current_ + 1];
}

bool EntryPointSet::advance() {
  if (current_ + 1 >= points_.size()) return false;
  ++current_;
  return true;
}

void EntryPointSet::reset(std::size_t j) {
  if (j >= points_.size()) throw ConfigError("EntryPointSet: index out of range");
  current_ = j;
}

}  // namespace ciac
