#include "ciac/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ciac {

std::string_view to_string(TeleopMode m) { return m == TeleopMode::Traditional ? "TRADITIONAL" : "CIAC"; }

std::string_view to_string(LambdaSource s) {
  switch (s) {
    case LambdaSource::Bayes: return "BAYES";
    case LambdaSource::LinearRamp: return "LINEAR_RAMP";
    case LambdaSource::Fixed: return "FIXED";
  }
  return "BAYES";
}

std::string_view to_string(IntentSource s) { return s == IntentSource::Kalman ? "KALMAN" : "ORACLE"; }

TeleopMode parse_mode(std::string_view s) {
  if (s == "TRADITIONAL" || s == "traditional") return TeleopMode::Traditional;
  if (s == "CIAC" || s == "ciac") return TeleopMode::Ciac;
  throw ConfigError("unknown mode: " + std::string(s));
}

LambdaSource parse_lambda_source(std::string_view s) {
  if (s == "BAYES" || s == "bayes") return LambdaSource::Bayes;
  if (s == "LINEAR_RAMP" || s == "linear_ramp" || s == "ramp") return LambdaSource::LinearRamp;
  if (s == "FIXED" || s == "fixed") return LambdaSource::Fixed;
  throw ConfigError("unknown lambda source: " + std::string(s));
}

IntentSource parse_intent_source(std::string_view s) {
  if (s == "KALMAN" || s == "kalman") return IntentSource::Kalman;
  if (s == "ORACLE" || s == "oracle") return IntentSource::Oracle;
  throw ConfigError("unknown intent source: " + std::string(s));
}

void PipelineConfig::validate() const {
  if (!(lambda_fixed >= 0.0 && lambda_fixed <= 1.0)) throw ConfigError("PipelineConfig: lambda_fixed must be in [0,1]");
  if (!(ramp_cap >= 0.0 && ramp_cap <= 1.0)) throw ConfigError("PipelineConfig: ramp_cap must be in [0,1]");
  if (!(ramp_duration > 0.0)) throw ConfigError("PipelineConfig: ramp_duration must be positive");
  if (label_strategy != 1 && label_strategy != 2) throw ConfigError("PipelineConfig: label_strategy must be 1 or 2");
  kalman.validate();
  confidence.validate();
}

RecordingRow make_row(const std::array<ManipulatorState, 2>& tools, const OperatorFrame& hands, double t) {
  RecordingRow row;
  row.set_sample(tools[0].sample(t));
  row.set_sample(tools[1].sample(t));
  row.set_sample(hands.right.sample(t));
  row.set_sample(hands.left.sample(t));
  row.label = hands.gesture;
  return row;
}

Pipeline::Pipeline(const PipelineConfig& cfg, const SimConfig& sim, ProbabilityModel model, const Impedanced& imp)
    : cfg_(cfg),
      sim_(sim),
      model_(std::move(model)),
      strategy_(LabelStrategy::strategy(cfg.label_strategy)),
      est_r_(imp, cfg.kalman),
      est_l_(imp, cfg.kalman),
      confidence_(cfg.confidence),
      right_(cfg.controller, sim.entry_points(cfg.controller.fixed_height)),
      left_(cfg.controller, sim.entry_points(cfg.controller.fixed_height)) {
  cfg_.validate();
  stream_.config = cfg_.stream;
}

double Pipeline::lambda(double t) const {
  double l = 0.0;
  switch (cfg_.lambda_source) {
    case LambdaSource::Bayes: l = confidence_.lambda(); break;
    case LambdaSource::LinearRamp:
      l = std::clamp(cfg_.ramp_cap * (t - ramp_t0_) / cfg_.ramp_duration, 0.0, cfg_.ramp_cap);
      break;
    case LambdaSource::Fixed: l = cfg_.lambda_fixed; break;
  }
  if (lambda_cap_) l = std::min(l, std::clamp(*lambda_cap_, 0.0, 1.0));
  return l;
}

void Pipeline::enter_ciac(const OperatorFrame& delivered, const std::array<ManipulatorState, 2>& tools) {
  auto_ = tools[0].pose.orientation;
  ref_ = delivered.right.pose.orientation;
  right_.reset(tools[0].pose.position);
  left_.reset(tools[1].pose.position);
}

std::array<ToolCommand, 2> Pipeline::step(const OperatorFrame& delivered, const std::array<ManipulatorState, 2>& tools,
                                          const VisibilitySample& vis, double t, ControlTrace& trace) {
  if (!started_) {
    for (int i = 0; i < 2; ++i) {
      last_[static_cast<std::size_t>(i)].pose = tools[static_cast<std::size_t>(i)].pose;
      last_[static_cast<std::size_t>(i)].gripper = tools[static_cast<std::size_t>(i)].gripper;
    }
    auto_ = ref_ = delivered.right.pose.orientation;
    started_ = true;
  }
  if (pending_mode_) {
    if (*pending_mode_ == TeleopMode::Ciac && cfg_.mode != TeleopMode::Ciac) enter_ciac(delivered, tools);
    cfg_.mode = *pending_mode_;
    pending_mode_.reset();
  }

  // Gesture stream.
  const RecordingRow row = make_row(tools, delivered, t);
  GestureClass emitted = GestureClass::Other;
  if (model_) emitted = stream_step(stream_, stream_features(row), model_);
  const GestureClass surgeme = cfg_.fixed_surgeme.value_or(emitted);

  // Intent, one estimator per hand; repeated deliveries are not fused twice.
  const bool fresh = delivered.timestamp > last_delivered_;
  if (fresh) {
    last_delivered_ = delivered.timestamp;
    est_r_.step({delivered.right.force, delivered.right.pose.position, delivered.right.velocity, delivered.timestamp});
    est_l_.step({delivered.left.force, delivered.left.pose.position, delivered.left.velocity, delivered.timestamp});
  }
  IntentEstimated intent_r = est_r_.estimate(), intent_l = est_l_.estimate();
  if (cfg_.intent == IntentSource::Oracle) {
    intent_r.tau_h_hat = delivered.right.true_target;
    intent_l.tau_h_hat = delivered.left.true_target;
  }

  confidence_.push(vis);
  const double lam = lambda(t);

  // Clutch: freeze the commands; on release re-anchor hand to tool.
  const HandFrame* hands[2] = {&delivered.right, &delivered.left};
  if (delivered.clutch) {
    clutched_ = true;
  } else if (clutched_) {
    clutched_ = false;
    for (std::size_t i = 0; i < 2; ++i) offset_[i] = last_[i].pose.position - hands[i]->pose.position;
    if (cfg_.mode == TeleopMode::Ciac) {
      auto_ = last_[0].pose.orientation;
      ref_ = delivered.right.pose.orientation;
    }
  }
  intent_r.tau_h_hat += offset_[0];
  intent_l.tau_h_hat += offset_[1];

  std::array<ToolCommand, 2> cmd = last_;
  BlendCommand blend_r;
  if (!clutched_) {
    if (cfg_.mode == TeleopMode::Traditional) {
      for (std::size_t i = 0; i < 2; ++i) {
        cmd[i].pose.position = hands[i]->pose.position + offset_[i];
        cmd[i].pose.orientation = hands[i]->pose.orientation;
        cmd[i].gripper = hands[i]->gripper;
      }
      blend_r.tau = cmd[0].pose.position;
      blend_r.surgeme = surgeme;
    } else {
      ControlInput in;
      in.surgeme = surgeme;
      in.intent = intent_r;
      in.lambda = lam;
      in.tool = tools[0].pose;
      in.pedal = delivered.pedal;
      in.timestamp = delivered.timestamp;
      blend_r = right_.control_tick(in);

      ControlInput in_l;
      in_l.intent = intent_l;
      in_l.tool = tools[1].pose;
      in_l.timestamp = delivered.timestamp;
      const BlendCommand blend_l = left_.control_tick(in_l);

      Rot3d orient = auto_ * (ref_.inverse() * delivered.right.pose.orientation);
      if (blend_r.auto_orient && cfg_.auto_orient) {
        const auto traj = auto_orient(orient, TaskFramed{});
        if (!traj.empty()) {
          orient = traj.front();
          auto_ = orient;
          ref_ = delivered.right.pose.orientation;
        }
      }
      cmd[0].pose = {blend_r.tau, orient};
      cmd[0].gripper = delivered.right.gripper;
      cmd[1].pose = {blend_l.tau, delivered.left.pose.orientation};
      cmd[1].gripper = delivered.left.gripper;
    }
    last_ = cmd;
  }

  trace.mode = static_cast<int>(cfg_.mode);
  trace.tau_h_hat = intent_r.tau_h_hat;
  trace.tau_r = blend_r.tau_r;
  trace.tau = cmd[0].pose.position;
  trace.lambda = blend_r.lambda_used;
  trace.lambda_scalar = lam;
  trace.surgeme_true = code(strategy_(delivered.gesture));
  trace.surgeme_emitted = code(emitted);
  trace.probabilities = stream_.averaged;
  trace.entry_index = static_cast<int>(right_.entries().current_index());
  trace.auto_orient = blend_r.auto_orient && cfg_.auto_orient && cfg_.mode == TeleopMode::Ciac && !clutched_;
  trace.rate_limited = blend_r.rate_limited;
  trace.stale = blend_r.stale;
  return cmd;
}

}  // namespace ciac
