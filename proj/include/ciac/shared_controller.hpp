#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <vector>

#include "ciac/intent_estimator.hpp"
#include "ciac/kinematics.hpp"
#include "ciac/surgeme.hpp"

namespace ciac {

// Componentwise convex blend tau = lambda * tau_r + (1 - lambda) * tau_h_hat.
// Lambda is clamped to [0, 1]; use lambda_in_range to detect clamping.
template <typename Scalar>
Vec3<Scalar> blend(const Vec3<Scalar>& tau_r, const Vec3<Scalar>& tau_h_hat, const Vec3<Scalar>& lambda) {
  const Vec3<Scalar> l = lambda.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
  return l.cwiseProduct(tau_r) + (Vec3<Scalar>::Ones() - l).cwiseProduct(tau_h_hat);
}

template <typename Scalar>
bool lambda_in_range(const Vec3<Scalar>& lambda) {
  return lambda.allFinite() && (lambda.array() >= Scalar(0)).all() && (lambda.array() <= Scalar(1)).all();
}

enum class TargetRule { Human, Fixed, EntryCurrent, EntryNext, Hold };
enum class MaskRule { Zero, Live };

struct AxisRule {
  TargetRule target = TargetRule::Human;
  double value = 0.0;  // resolved coordinate for Fixed / Entry* rules
  MaskRule mask = MaskRule::Zero;
};

struct SurgemeParadigm {
  GestureClass surgeme = GestureClass::Other;
  std::array<AxisRule, 3> axes{};
  bool entry_clamped = false;  // x_{j+1} requested past the last entry point

  Vec3d mask(double lambda) const;
};

// Robot target rule and confidence mask per surgeme, in task coordinates.
SurgemeParadigm paradigm_for(GestureClass surgeme, const EntryPointSet& entries, double fixed_height);

struct ControllerConfig {
  double fixed_height = 0.010;         // m above tissue for Positioning / Handoff z target
  double rate_limit = 0.005;           // m per tick, per axis
  double advance_radius = 0.015;       // m from x_{j+1} for a Handoff to count toward advancing j
  double stale_after = 0.05;           // s
};

struct ControlInput {
  GestureClass surgeme = GestureClass::Other;
  IntentEstimated intent;
  double lambda = 0.0;  // scalar confidence
  Posed tool;           // current manipulator pose, task frame
  bool pedal = false;
  double timestamp = 0.0;
};

struct BlendCommand {
  Vec3d tau = Vec3d::Zero();
  Vec3d tau_r = Vec3d::Zero();
  Vec3d lambda_used = Vec3d::Zero();
  GestureClass surgeme = GestureClass::Other;
  bool auto_orient = false;
  std::size_t entry_index = 0;
  bool rate_limited = false;
  bool stale = false;
  bool entry_clamped = false;
  bool lambda_clamped = false;
};

// One manipulator's per-tick arbitration between robot and estimated human targets.
class SharedController {
 public:
  SharedController(const ControllerConfig& cfg, EntryPointSet entries);

  BlendCommand control_tick(const ControlInput& in);

  const EntryPointSet& entries() const { return entries_; }
  EntryPointSet& entries() { return entries_; }
  const ControllerConfig& config() const { return cfg_; }
  const std::optional<BlendCommand>& last_command() const { return last_; }
  void reset(const std::optional<Vec3d>& start_command = std::nullopt);

 private:
  void track_cycle(const ControlInput& in);

  enum class Cycle { Idle, Pulled, HandedOff };

  ControllerConfig cfg_;
  EntryPointSet entries_;
  std::optional<BlendCommand> last_;
  GestureClass previous_surgeme_ = GestureClass::Other;
  Vec3d hold_ = Vec3d::Zero();
  Cycle cycle_ = Cycle::Idle;
};

// Shortest rotation taking the tool x axis onto the task x axis, sampled with
// at most max_step radians per element. Empty when already aligned.
std::vector<Rot3d> auto_orient(const Rot3d& current, const TaskFramed& frame, double max_step = 4.5 / kDegPerRad);

}  // namespace ciac
