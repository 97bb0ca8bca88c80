#pragma once

#include <array>
#include <optional>
#include <string_view>

#include "ciac/confidence.hpp"
#include "ciac/gesture_stream.hpp"
#include "ciac/intent_estimator.hpp"
#include "ciac/shared_controller.hpp"
#include "ciac/sim_world.hpp"

namespace ciac {

enum class TeleopMode : int { Traditional = 0, Ciac = 1 };
enum class LambdaSource : int { Bayes = 0, LinearRamp = 1, Fixed = 2 };
enum class IntentSource : int { Kalman = 0, Oracle = 1 };

std::string_view to_string(TeleopMode m);
std::string_view to_string(LambdaSource s);
std::string_view to_string(IntentSource s);
TeleopMode parse_mode(std::string_view s);
LambdaSource parse_lambda_source(std::string_view s);
IntentSource parse_intent_source(std::string_view s);

struct PipelineConfig {
  TeleopMode mode = TeleopMode::Ciac;
  LambdaSource lambda_source = LambdaSource::Bayes;
  double lambda_fixed = 0.0;
  double ramp_cap = 0.8;
  double ramp_duration = 2.0;  // s from 0 to ramp_cap
  IntentSource intent = IntentSource::Kalman;
  std::optional<GestureClass> fixed_surgeme;  // used for control instead of the emitted class
  bool auto_orient = true;
  int label_strategy = 1;  // maps the operator's raw gesture to the logged true surgeme
  KalmanConfigd kalman;
  ConfidenceParams confidence;
  ControllerConfig controller;
  StreamConfig stream;

  void validate() const;
};

// Per-tick C-IAC loop for both tools: gesture stream, intent estimation, marker
// trust, blending and auto-orientation. In traditional mode the tools follow the
// delivered hands and everything else still runs for logging.
class Pipeline {
 public:
  Pipeline(const PipelineConfig& cfg, const SimConfig& sim, ProbabilityModel model = {},
           const Impedanced& imp = Impedanced::defaults());

  // tools are the states at the start of the tick; delivered is the delayed operator frame.
  std::array<ToolCommand, 2> step(const OperatorFrame& delivered, const std::array<ManipulatorState, 2>& tools,
                                  const VisibilitySample& vis, double t, ControlTrace& trace);

  void set_mode(TeleopMode m) { pending_mode_ = m; }
  TeleopMode mode() const { return cfg_.mode; }
  void restart_ramp(double t) { ramp_t0_ = t; }
  void advance_entry() { right_.entries().advance(); }
  void set_lambda_cap(std::optional<double> cap) { lambda_cap_ = cap; }
  // Replaces the configured fixed surgeme; nullopt returns control to the stream.
  void set_surgeme(std::optional<GestureClass> s) { cfg_.fixed_surgeme = s; }
  std::size_t entry_index() const { return right_.entries().current_index(); }
  const PipelineConfig& config() const { return cfg_; }
  const StreamState& stream() const { return stream_; }

  // Lambda from the configured source before masking.
  double lambda(double t) const;

 private:
  void enter_ciac(const OperatorFrame& delivered, const std::array<ManipulatorState, 2>& tools);

  PipelineConfig cfg_;
  SimConfig sim_;
  ProbabilityModel model_;
  LabelStrategy strategy_;
  StreamState stream_;
  IntentEstimatord est_r_, est_l_;
  WindowedConfidence confidence_;
  SharedController right_, left_;
  std::optional<TeleopMode> pending_mode_;
  std::optional<double> lambda_cap_;
  double ramp_t0_ = 0.0;
  double last_delivered_ = -1.0;
  bool started_ = false;
  bool clutched_ = false;
  std::array<Vec3d, 2> offset_ = {Vec3d::Zero(), Vec3d::Zero()};
  std::array<ToolCommand, 2> last_;
  Rot3d auto_, ref_;  // right tool orientation = auto_ * ref_^-1 * hand
};

RecordingRow make_row(const std::array<ManipulatorState, 2>& tools, const OperatorFrame& hands, double t);

}  // namespace ciac
