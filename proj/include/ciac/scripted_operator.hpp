#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "ciac/intent_estimator.hpp"
#include "ciac/kinematics.hpp"
#include "ciac/sim_world.hpp"

namespace ciac {

struct OperatorProfile {
  double reaction_latency = 0.15;   // s, delay on what the operator sees of the tools
  double tremor_sigma = 0.001;      // m, target-equivalent noise in u_h
  double fitts_a = 0.3;             // s
  double fitts_b = 0.15;            // s per bit
  double fitts_width = 0.0015;      // m
  double motor_noise_gain = 0.08;   // endpoint sd per metre moved
  double motor_noise_floor = 0.0005;
  double aim_tolerance = 0.001;     // m, no correction below this observed error
  double settle_speed = 0.005;      // m/s
  double max_settle = 1.0;          // s
  double orientation_error_mean = 25.0;  // deg, per throw
  double orientation_error_sd = 5.0;
  double pedal_threshold = 5.0;     // deg of perceived perpendicularity error
  double timing_jitter = 0.15;      // relative sd of gesture durations
  double pace = 1.0;                // scales scripted gesture durations

  static OperatorProfile novice() { return {}; }
  static OperatorProfile expert();
  // No motor, timing, orientation or force noise.
  static OperatorProfile noiseless();
  void validate() const;
};

// Fitts-law duration of a point-to-point movement of length d.
double fitts_duration(const OperatorProfile& p, double distance);

// Sees the tools reaction_latency late.
class ToolObserver {
 public:
  ToolObserver(double latency, double tick);
  void push(const std::array<ManipulatorState, 2>& tools);
  const ManipulatorState& observed(int tool = 0) const;
  // Finite-difference speed of the observed tool.
  double observed_speed(int tool = 0) const;
  double tick() const { return tick_; }

 private:
  std::size_t lag_;
  double tick_;
  std::deque<std::array<ManipulatorState, 2>> history_;
};

// Reaches a sequence of goals with the right hand using Fitts-timed minimum-jerk
// submovements and visually guided corrections. The left hand rests.
class ReachingOperator {
 public:
  ReachingOperator(const OperatorProfile& profile, const SimConfig& sim, std::vector<Vec3d> goals,
                   std::uint64_t seed, const Posed& right_start, const Posed& left_start);

  // Live console frame at this tick; tools are the states at the start of the tick.
  OperatorFrame step(const std::array<ManipulatorState, 2>& tools, std::uint64_t tick);
  // The current goal was reached; the next movement starts on the following tick.
  void next_goal();

  std::size_t goal_index() const { return goal_; }
  bool done() const { return goal_ >= goals_.size(); }
  const Vec3d& goal() const { return goals_.at(goal_); }
  const std::vector<Vec3d>& goals() const { return goals_; }
  std::size_t submovements() const { return moves_; }

 private:
  void start_move(const Vec3d& aim, double t);

  OperatorProfile profile_;
  SimConfig sim_;
  std::vector<Vec3d> goals_;
  std::size_t goal_ = 0;
  NoiseTape tape_;
  Impedanced imp_;
  ToolObserver observer_;
  Posed right_, left_;
  std::optional<MinJerk> move_;
  std::size_t moves_ = 0;
  std::size_t corrections_ = 0;
  bool fresh_goal_ = false;
};

// Raw gesture labels used by the suturing script.
enum RawGesture : RawGestureLabel {
  kG1 = 1, kG2 = 2, kG3 = 3, kG4 = 4, kG5 = 5, kG6 = 6, kG8 = 8, kG10 = 10, kG11 = 11
};

// Planned gesture order for a number of throws.
std::vector<std::pair<int, RawGestureLabel>> suturing_script(int throws);

struct HandKey {
  Vec3d position = Vec3d::Zero();
  Rot3d orientation;
  double gripper = 0.0;
};

// Bimanual scripted suturing: each gesture is a chain of keyframes joined by
// minimum-jerk segments. Positioning is closed loop on the observed tool.
class SuturingOperator {
 public:
  SuturingOperator(const OperatorProfile& profile, const SimConfig& sim, int throws, std::uint64_t seed,
                   double height = 0.010);

  OperatorFrame step(const std::array<ManipulatorState, 2>& tools, std::uint64_t tick);
  bool done() const { return step_ >= script_.size(); }
  int throw_index() const;
  RawGestureLabel gesture() const;
  const std::vector<std::pair<int, RawGestureLabel>>& script() const { return script_; }
  // Per-throw orientation error applied to the right hand, radians.
  double orientation_error(int throw_index) const;

  static Posed right_start(const SimConfig& sim);
  static Posed left_start(const SimConfig& sim);

 private:
  struct Segment {
    HandKey right, left;
    double duration = 1.0;
  };
  void begin_gesture(double t);
  void plan_positioning(double t);
  void push_segment(double duration);
  void move_right(const Vec3d& aim, std::size_t slot);
  void move_left(const Vec3d& aim, std::size_t slot);
  void orient_right(const Rot3d& nominal);
  double jitter(std::size_t slot, double base);
  Vec3d motor_noise(std::size_t slot, double distance);
  Vec3d entry(int j) const;

  OperatorProfile profile_;
  SimConfig sim_;
  double height_;
  NoiseTape tape_;
  Impedanced imp_;
  ToolObserver observer_;
  std::vector<std::pair<int, RawGestureLabel>> script_;
  std::vector<Rot3d> errors_;
  std::vector<double> error_angles_;
  std::size_t step_ = 0;

  HandKey right_, left_;    // keyframe reached so far
  HandKey plan_r_, plan_l_;  // keyframe at the end of the plan
  std::deque<Segment> plan_;
  double seg_t0_ = 0.0;
  bool started_ = false;
  bool positioning_ = false;  // G2 correcting or holding
  std::size_t corrections_ = 0;
  double hold_until_ = -1.0;
  int wobble_ = 0;
  Vec3d goal_ = Vec3d::Zero();
};

}  // namespace ciac
