#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ciac/harness.hpp"

namespace ciac {

inline constexpr int kProtocolVersion = 1;
inline constexpr const char* kInputLogFormat = "ciac-session-inputs";

// Bad or unsupported wire message. The session keeps running.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Hand : int { Right = 0, Left = 1 };
std::string_view to_string(Hand h);
Hand parse_hand(std::string_view s);

// Client -> server. Absent fields keep their previous value.
struct ClientInput {
  std::uint64_t tick = 0;  // last tick the client has seen
  Hand hand = Hand::Right;
  std::optional<Vec3d> position;
  std::optional<Vec3d> velocity;
  std::optional<Rot3d> orientation;
  std::optional<double> gripper;
  std::optional<Vec3d> target;  // operator's own goal, logged as the true intent
  std::optional<Vec3d> force;   // measured u_h; synthesized from the impedance otherwise
  std::optional<bool> pedal;
  std::optional<bool> clutch;
  bool mode_toggle = false;
  std::optional<bool> occlude;
  std::optional<std::optional<double>> lambda_cap;           // null clears
  std::optional<std::optional<GestureClass>> surgeme;        // null returns to the classifier
  std::optional<RawGestureLabel> gesture;                    // operator's raw label for logging

  bool operator==(const ClientInput&) const;
};

ClientInput parse_client_input(std::string_view text);
// Canonical single-line JSON.
std::string client_input_to_json(const ClientInput& in);

std::string ack_frame(std::uint64_t tick);
std::string error_frame(std::uint64_t tick, std::string_view message);

struct SessionMetrics {
  std::uint64_t ticks = 0;
  double elapsed = 0.0;
  double accuracy = 0.0;
  double push_perpendicularity = 0.0;  // mean over true Push ticks
  std::size_t push_ticks = 0;
  std::size_t goals_reached = 0;
  std::size_t rejected = 0;
};

struct SessionSetup {
  std::string id = "s1";
  ExperimentSpec spec = ExperimentSpec::reach_defaults();
  TeleopMode mode = TeleopMode::Ciac;
  std::uint64_t seed = 1;
  std::string model;  // checkpoint path for the record

  static SessionSetup preset(std::string_view name);
};

// Applied inputs per tick, enough to re-run a session offline.
struct SessionInputLog {
  SessionSetup setup;
  std::vector<std::vector<ClientInput>> ticks;

  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static SessionInputLog read(std::istream& in);
  static SessionInputLog load(const std::filesystem::path& path);
};

// One live simulation. Inputs may be queued from any thread; tick() runs on the
// simulation thread only.
class Session {
 public:
  explicit Session(const SessionSetup& setup, ProbabilityModel model = {});

  // Parses and queues; returns an ack or an error frame.
  std::string handle_client_input(std::string_view text);
  // Latest wins per hand until the next tick.
  void queue(const ClientInput& in);

  // Applies queued inputs, advances one tick and returns the snapshot frame.
  std::string tick();

  bool claim(Hand h);
  void release(Hand h);
  std::size_t clients() const;

  const std::string& id() const { return setup_.id; }
  const SessionSetup& setup() const { return setup_; }
  std::uint64_t ticks() const;
  const SimEventLog& log() const { return log_; }
  const SessionInputLog& inputs() const { return inputs_; }
  const SessionMetrics& metrics() const { return metrics_; }
  TeleopMode mode() const { return pipe_.mode(); }

 private:
  void apply(const ClientInput& in);
  std::string snapshot(const SimRecord& rec) const;

  SessionSetup setup_;
  SimConfig sim_;
  World world_;
  Pipeline pipe_;
  Impedanced imp_;
  SimEventLog log_;
  SessionInputLog inputs_;
  SessionMetrics metrics_;

  struct HandState {
    Posed pose;
    Vec3d velocity = Vec3d::Zero();
    double gripper = 0.0;
    std::optional<Vec3d> target, force;
    bool moved = false;
  };
  std::array<HandState, 2> hands_;
  bool pedal_ = false, clutch_ = false, occluded_ = false;
  RawGestureLabel gesture_ = 0;
  std::optional<TeleopMode> toggled_;
  int dwell_ = 0;
  std::size_t correct_ = 0;
  double perp_sum_ = 0.0;

  mutable std::mutex mutex_;  // guards pending_, claimed_ and the tick counter
  std::array<std::optional<ClientInput>, 2> pending_;
  std::array<bool, 2> claimed_ = {false, false};
  std::uint64_t tick_ = 0;
};

// Re-runs a recorded session headlessly.
SimEventLog replay_session(const SessionInputLog& inputs, ProbabilityModel model = {});

}  // namespace ciac
