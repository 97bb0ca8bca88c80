#include "ciac/shared_controller.hpp"

#include <cmath>

namespace ciac {

Vec3d SurgemeParadigm::mask(double lambda) const {
  const double l = std::clamp(lambda, 0.0, 1.0);
  Vec3d out;
  for (int i = 0; i < 3; ++i) out[i] = axes[i].mask == MaskRule::Live ? l : 0.0;
  return out;
}

SurgemeParadigm paradigm_for(GestureClass surgeme, const EntryPointSet& entries, double fixed_height) {
  const AxisRule human{TargetRule::Human, 0.0, MaskRule::Zero};
  const AxisRule fixed_z{TargetRule::Fixed, fixed_height, MaskRule::Live};
  const AxisRule entry_j{TargetRule::EntryCurrent, entries.current().x(), MaskRule::Live};
  const AxisRule entry_next{TargetRule::EntryNext, entries.next().x(), MaskRule::Live};
  const AxisRule hold{TargetRule::Hold, 0.0, MaskRule::Live};

  SurgemeParadigm p;
  p.surgeme = surgeme;
  switch (surgeme) {
    case GestureClass::Positioning:
      p.axes = {human, human, fixed_z};
      break;
    case GestureClass::Push:
      p.axes = {entry_j, human, human};
      break;
    case GestureClass::Pull:
      p.axes = {entry_next, hold, hold};
      p.entry_clamped = entries.next_is_clamped();
      break;
    case GestureClass::Handoff:
      p.axes = {entry_next, human, fixed_z};
      p.entry_clamped = entries.next_is_clamped();
      break;
    case GestureClass::Other:
      p.axes = {human, human, human};
      break;
  }
  return p;
}

SharedController::SharedController(const ControllerConfig& cfg, EntryPointSet entries)
    : cfg_(cfg), entries_(std::move(entries)) {
  if (!(cfg_.rate_limit > 0.0)) throw ConfigError("ControllerConfig: rate_limit must be positive");
  if (!(cfg_.stale_after > 0.0)) throw ConfigError("ControllerConfig: stale_after must be positive");
}

void SharedController::reset(const std::optional<Vec3d>& start_command) {
  last_.reset();
  if (start_command) {
    BlendCommand c;
    c.tau = *start_command;
    c.tau_r = *start_command;
    c.entry_index = entries_.current_index();
    last_ = c;
  }
  previous_surgeme_ = GestureClass::Other;
  cycle_ = Cycle::Idle;
}

void SharedController::track_cycle(const ControlInput& in) {
  // j advances on a completed Pull -> Handoff (near x_{j+1}) -> Positioning cycle.
  switch (in.surgeme) {
    case GestureClass::Pull:
      if (cycle_ == Cycle::Idle) cycle_ = Cycle::Pulled;
      break;
    case GestureClass::Handoff:
      if (cycle_ == Cycle::Pulled && !entries_.next_is_clamped() &&
          std::abs(in.tool.position.x() - entries_.next().x()) <= cfg_.advance_radius)
        cycle_ = Cycle::HandedOff;
      break;
    case GestureClass::Positioning:
      if (cycle_ == Cycle::HandedOff) entries_.advance();
      cycle_ = Cycle::Idle;
      break;
    default:
      break;
  }
}

BlendCommand SharedController::control_tick(const ControlInput& in) {
  const bool fresh = std::isfinite(in.lambda) && in.intent.tau_h_hat.allFinite() &&
                     in.timestamp - in.intent.timestamp <= cfg_.stale_after + 1e-9;
  if (!fresh && last_) {
    BlendCommand repeat = *last_;
    repeat.stale = true;
    repeat.auto_orient = false;
    return repeat;
  }

  track_cycle(in);
  if (in.surgeme == GestureClass::Pull && previous_surgeme_ != GestureClass::Pull) hold_ = in.tool.position;
  previous_surgeme_ = in.surgeme;

  const SurgemeParadigm p = paradigm_for(in.surgeme, entries_, cfg_.fixed_height);
  const Vec3d& human = in.intent.tau_h_hat;

  BlendCommand cmd;
  cmd.surgeme = in.surgeme;
  cmd.entry_index = entries_.current_index();
  cmd.entry_clamped = p.entry_clamped;
  cmd.lambda_clamped = !(in.lambda >= 0.0 && in.lambda <= 1.0);
  for (int i = 0; i < 3; ++i) {
    switch (p.axes[i].target) {
      case TargetRule::Human: cmd.tau_r[i] = human[i]; break;
      case TargetRule::Hold: cmd.tau_r[i] = hold_[i]; break;
      default: cmd.tau_r[i] = p.axes[i].value; break;
    }
  }
  cmd.lambda_used = p.mask(std::isfinite(in.lambda) ? in.lambda : 0.0);
  Vec3d tau = blend(cmd.tau_r, human, cmd.lambda_used);

  if (last_) {
    for (int i = 0; i < 3; ++i) {
      const double delta = tau[i] - last_->tau[i];
      if (std::abs(delta) <= cfg_.rate_limit) continue;
      tau[i] = last_->tau[i] + std::copysign(cfg_.rate_limit, delta);
      cmd.rate_limited = true;
    }
  }
  cmd.tau = tau;
  cmd.auto_orient = in.pedal && (in.surgeme == GestureClass::Positioning || in.surgeme == GestureClass::Push);
  last_ = cmd;
  return cmd;
}

std::vector<Rot3d> auto_orient(const Rot3d& current, const TaskFramed& frame, double max_step) {
  if (!(max_step > 0.0)) throw ConfigError("auto_orient: max_step must be positive");
  const Vec3d a = current.axis(0);
  const Vec3d b = frame.orientation.axis(0);
  const double angle = std::atan2(a.cross(b).norm(), a.dot(b));
  if (angle < 1e-9) return {};

  const Eigen::Quaterniond align = Eigen::Quaterniond::FromTwoVectors(a, b);
  const auto n = static_cast<int>(std::ceil(angle / max_step));
  std::vector<Rot3d> traj;
  traj.reserve(static_cast<std::size_t>(n));
  const Eigen::Quaterniond id = Eigen::Quaterniond::Identity();
  for (int k = 1; k <= n; ++k) {
    const double t = static_cast<double>(k) / n;
    traj.push_back(Rot3d::from_quaternion(id.slerp(t, align)) * current);
  }
  return traj;
}

}  // namespace ciac
