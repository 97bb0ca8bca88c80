#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ciac/confidence.hpp"
#include "ciac/errors.hpp"
#include "ciac/gesture_stream.hpp"
#include "ciac/intent_estimator.hpp"
#include "ciac/kinematics.hpp"
#include "ciac/surgeme.hpp"

namespace ciac {

// Markov on/off occlusion for one marker. rate is the long-run occluded fraction,
// mean_episode_ticks the expected length of an occluded run.
struct OcclusionConfig {
  double rate = 0.2;
  double mean_episode_ticks = 20.0;

  void validate() const;
};

struct OcclusionTimeline {
  std::vector<std::uint8_t> kd_visible;
  std::vector<std::uint8_t> ch_visible;

  std::size_t size() const { return kd_visible.size(); }
  // Ticks past the end repeat the last sample; an empty timeline is all-visible.
  VisibilitySample at(std::size_t tick, double tick_seconds) const;
  double occluded_fraction() const;  // kd and ch combined
};

std::vector<std::uint8_t> markov_visibility(const OcclusionConfig& cfg, std::size_t ticks, std::mt19937_64& rng);
OcclusionTimeline occlusion_timeline(const OcclusionConfig& kd, const OcclusionConfig& ch, std::size_t ticks,
                                     std::uint64_t seed);

struct SimConfig {
  double tick = 0.05;                 // s
  int delay_ticks = 1;                // teleoperation delay
  double tracking_time_constant = 0.1;
  double max_speed = 0.25;            // m/s
  double max_angular_speed = 6.0;     // rad/s
  std::vector<double> entry_offsets = {0.015, 0.030, 0.045, 0.060};  // m along x
  double entry_y = 0.0;               // m, entry line in the task frame
  Vec3d start = Vec3d(0.0, 0.005, 0.020);
  OcclusionConfig kd_occlusion;
  OcclusionConfig ch_occlusion;
  std::uint64_t seed = 1;

  void validate() const;
  EntryPointSet entry_points(double height = 0.0) const;
};

struct ManipulatorState {
  DeviceId device = DeviceId::PSM1;
  Posed pose;
  Vec3d linear_velocity = Vec3d::Zero();
  Vec3d angular_velocity = Vec3d::Zero();
  double gripper = 0.0;

  KinematicSample sample(double timestamp) const;
};

struct ToolCommand {
  Posed pose;
  double gripper = 0.0;
};

// First-order tracking of a pose command over one tick. A non-finite command is
// rejected, the pose is held and false is returned.
bool track_command(ManipulatorState& m, const ToolCommand& cmd, const SimConfig& cfg);

// Fixed integer-tick delay; before the line fills it repeats the first value.
template <typename T>
class DelayLine {
 public:
  explicit DelayLine(int delay_ticks) : delay_(delay_ticks) {
    if (delay_ticks < 0) throw ConfigError("DelayLine: delay must be non-negative");
  }

  const T& push(const T& value) {
    buf_.push_back(value);
    while (buf_.size() > static_cast<std::size_t>(delay_) + 1) buf_.pop_front();
    return buf_.front();
  }
  int delay() const { return delay_; }
  void clear() { buf_.clear(); }

 private:
  int delay_;
  std::deque<T> buf_;
};

// Command at tick t is the hand pose at tick t - delay.
std::vector<Posed> traditional_command(std::span<const Posed> hand, int delay_ticks);

// Quintic rest-to-rest segment.
struct MinJerk {
  Vec3d from = Vec3d::Zero();
  Vec3d to = Vec3d::Zero();
  double t0 = 0.0;
  double duration = 1.0;

  Vec3d position(double t) const;
  Vec3d velocity(double t) const;
  double phase(double t) const;  // min-jerk progress in [0,1]
  double phase_rate(double t) const;
  bool done(double t) const { return t >= t0 + duration; }
};

// u_h = -L1 (x - tau_h) - L2 xdot + L1 n, n the target-equivalent noise in metres.
Vec3d synthesize_operator_force(const Vec3d& true_target, const Vec3d& x, const Vec3d& xdot, const Impedanced& imp,
                                const Vec3d& noise = Vec3d::Zero());

// Per-stream indexed Gaussian draws. Element i is the same regardless of access
// order, so paired runs that consume different amounts still see the same tape.
class NoiseStream {
 public:
  NoiseStream() = default;
  explicit NoiseStream(std::uint64_t seed) : rng_(seed) {}
  const Vec3d& at(std::size_t i);
  double scalar(std::size_t i) { return at(i).x(); }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
  std::vector<Vec3d> draws_;
};

// Independent streams derived from one seed.
struct NoiseTape {
  explicit NoiseTape(std::uint64_t seed = 1);
  NoiseStream tremor_right, tremor_left, motor, orientation, timing;
};

// Operator hand as seen by the console: master device states plus synthesized force.
struct HandFrame {
  DeviceId device = DeviceId::SIGMA_R;
  Posed pose;
  Vec3d velocity = Vec3d::Zero();
  Vec3d angular_velocity = Vec3d::Zero();
  double gripper = 0.0;
  Vec3d force = Vec3d::Zero();
  Vec3d true_target = Vec3d::Zero();

  KinematicSample sample(double timestamp) const;
};

struct OperatorFrame {
  HandFrame right;
  HandFrame left;
  bool pedal = false;
  bool clutch = false;
  RawGestureLabel gesture = 0;
  double timestamp = 0.0;
};

// Controller-side annotations recorded alongside the world state.
struct ControlTrace {
  int mode = 0;  // 0 traditional, 1 shared control
  Vec3d tau_h_hat = Vec3d::Zero();
  Vec3d tau_r = Vec3d::Zero();
  Vec3d tau = Vec3d::Zero();
  Vec3d lambda = Vec3d::Zero();
  double lambda_scalar = 0.0;
  int surgeme_true = 0;
  int surgeme_emitted = 0;
  Probabilities probabilities = Probabilities::Constant(1.0 / kGestureClassCount);
  int entry_index = 0;
  bool auto_orient = false;
  bool rate_limited = false;
  bool stale = false;
  int goal_index = -1;  // task segment the operator is working on
  bool goal_reached = false;
};

struct SimRecord {
  std::uint64_t tick = 0;
  double time = 0.0;
  std::array<ManipulatorState, 2> tools;
  OperatorFrame hands;  // as delivered to the console after the delay
  bool kd_visible = true;
  bool ch_visible = true;
  bool rejected = false;
  double perpendicularity = 0.0;  // PSM1, degrees
  ControlTrace control;
};

struct SimLogHeader {
  std::string experiment;
  std::string mode;
  std::uint64_t seed = 0;
  std::string config;  // free-form key=value text of the run configuration
};

struct SimEventLog {
  SimLogHeader header;
  std::vector<SimRecord> records;

  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static SimEventLog read(std::istream& in);
  static SimEventLog load(const std::filesystem::path& path);
};

inline constexpr const char* kSimLogFormat = "ciac-sim-log";
inline constexpr int kSimLogVersion = 1;

std::string record_to_json(const SimRecord& r);
SimRecord record_from_json(const std::string& line, std::size_t row);

// Manipulators, markers and the console delay buffer.
class World {
 public:
  World(const SimConfig& cfg, const Posed& psm1_start, const Posed& psm2_start,
        std::optional<OcclusionTimeline> occlusion = std::nullopt);

  // Queues the operator frame for this tick and returns the one delivered after the delay.
  const OperatorFrame& deliver(const OperatorFrame& live);
  // Moves both tools toward their commands and returns this tick's record.
  SimRecord advance(const std::array<ToolCommand, 2>& commands, const TaskFramed& frame);

  const std::array<ManipulatorState, 2>& tools() const { return tools_; }
  const OperatorFrame& delivered() const { return delivered_; }
  VisibilitySample visibility() const;
  std::uint64_t tick() const { return tick_; }
  double time() const { return static_cast<double>(tick_) * cfg_.tick; }
  const SimConfig& config() const { return cfg_; }
  void force_occlusion(bool on) { forced_occlusion_ = on; }

 private:
  SimConfig cfg_;
  std::array<ManipulatorState, 2> tools_;
  OcclusionTimeline occlusion_;
  DelayLine<OperatorFrame> delay_;
  OperatorFrame delivered_;
  std::uint64_t tick_ = 0;
  bool forced_occlusion_ = false;
};

}  // namespace ciac
