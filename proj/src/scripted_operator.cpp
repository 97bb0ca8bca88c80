#include "ciac/scripted_operator.hpp"

#include <algorithm>
#include <cmath>

namespace ciac {

OperatorProfile OperatorProfile::expert() {
  OperatorProfile p;
  p.orientation_error_mean = 8.0;
  p.orientation_error_sd = 3.0;
  p.motor_noise_gain = 0.05;
  p.motor_noise_floor = 0.0003;
  return p;
}

OperatorProfile OperatorProfile::noiseless() {
  OperatorProfile p;
  p.tremor_sigma = 0.0;
  p.motor_noise_gain = 0.0;
  p.motor_noise_floor = 0.0;
  p.orientation_error_mean = 0.0;
  p.orientation_error_sd = 0.0;
  p.timing_jitter = 0.0;
  return p;
}

void OperatorProfile::validate() const {
  if (!(reaction_latency >= 0.0)) throw ConfigError("OperatorProfile: reaction_latency must be >= 0");
  if (!(tremor_sigma >= 0.0)) throw ConfigError("OperatorProfile: tremor_sigma must be >= 0");
  if (!(fitts_a > 0.0) || !(fitts_b >= 0.0) || !(fitts_width > 0.0))
    throw ConfigError("OperatorProfile: bad Fitts parameters");
  if (!(motor_noise_gain >= 0.0) || !(motor_noise_floor >= 0.0))
    throw ConfigError("OperatorProfile: motor noise must be >= 0");
  if (!(aim_tolerance > 0.0)) throw ConfigError("OperatorProfile: aim_tolerance must be positive");
  if (!(orientation_error_mean >= 0.0) || !(orientation_error_sd >= 0.0))
    throw ConfigError("OperatorProfile: orientation error must be >= 0");
  if (!(timing_jitter >= 0.0) || !(pace > 0.0)) throw ConfigError("OperatorProfile: bad timing parameters");
}

double fitts_duration(const OperatorProfile& p, double distance) {
  return p.fitts_a + p.fitts_b * std::log2(1.0 + distance / p.fitts_width);
}

// ---- observer ----

ToolObserver::ToolObserver(double latency, double tick)
    : lag_(static_cast<std::size_t>(std::lround(latency / tick))), tick_(tick) {}

void ToolObserver::push(const std::array<ManipulatorState, 2>& tools) {
  history_.push_back(tools);
  while (history_.size() > lag_ + 2) history_.pop_front();
}

const ManipulatorState& ToolObserver::observed(int tool) const {
  const std::size_t back = std::min(lag_, history_.size() - 1);
  return history_[history_.size() - 1 - back][static_cast<std::size_t>(tool)];
}

double ToolObserver::observed_speed(int tool) const {
  const std::size_t back = std::min(lag_, history_.size() - 1);
  const std::size_t i = history_.size() - 1 - back;
  if (i == 0) return 0.0;
  const auto k = static_cast<std::size_t>(tool);
  return (history_[i][k].pose.position - history_[i - 1][k].pose.position).norm() / tick_;
}

namespace {

HandFrame hand_frame(DeviceId dev, const Vec3d& p, const Rot3d& r, const Vec3d& v, const Vec3d& w, double g,
                     const Vec3d& target, const Impedanced& imp, const Vec3d& noise) {
  HandFrame h;
  h.device = dev;
  h.pose.position = p;
  h.pose.orientation = r;
  h.velocity = v;
  h.angular_velocity = w;
  h.gripper = g;
  h.true_target = target;
  h.force = synthesize_operator_force(target, p, v, imp, noise);
  return h;
}

constexpr std::size_t kDrawsPerStep = 16;
constexpr double kOpen = 0.8;
constexpr double kClosed = 0.05;

double deg(double d) { return d / kDegPerRad; }

}  // namespace

// ---- reaching ----

ReachingOperator::ReachingOperator(const OperatorProfile& profile, const SimConfig& sim, std::vector<Vec3d> goals,
                                   std::uint64_t seed, const Posed& right_start, const Posed& left_start)
    : profile_(profile),
      sim_(sim),
      goals_(std::move(goals)),
      tape_(seed),
      imp_(Impedanced::defaults()),
      observer_(profile.reaction_latency, sim.tick),
      right_(right_start),
      left_(left_start) {
  profile_.validate();
  if (goals_.empty()) throw ConfigError("ReachingOperator: no goals");
}

void ReachingOperator::start_move(const Vec3d& aim, double t) {
  const Vec3d from = move_ ? move_->to : right_.position;
  const double d = (aim - from).norm();
  const std::size_t k = std::min<std::size_t>(corrections_, kDrawsPerStep - 1);
  const Vec3d noise = tape_.motor.at(goal_ * kDrawsPerStep + k) * (profile_.motor_noise_gain * d + profile_.motor_noise_floor);
  move_ = MinJerk{from, aim + noise, t, fitts_duration(profile_, d)};
  ++corrections_;
  ++moves_;
}

void ReachingOperator::next_goal() {
  ++goal_;
  corrections_ = 0;
  fresh_goal_ = true;
}

OperatorFrame ReachingOperator::step(const std::array<ManipulatorState, 2>& tools, std::uint64_t tick) {
  const double t = static_cast<double>(tick) * sim_.tick;
  observer_.push(tools);

  if (!done()) {
    if (!move_ || (fresh_goal_ && move_->done(t))) {
      start_move(goal(), move_ ? std::max(t, move_->t0 + move_->duration) : t);
      fresh_goal_ = false;
    } else if (!fresh_goal_ && move_->done(t)) {
      const double since = t - (move_->t0 + move_->duration);
      if (since >= profile_.reaction_latency - 1e-9 &&
          (observer_.observed_speed() < profile_.settle_speed || since >= profile_.max_settle)) {
        const Vec3d e = goal() - observer_.observed().pose.position;
        if (e.norm() > profile_.aim_tolerance) start_move(move_->to + e, t);
      }
    }
  }

  Vec3d p = right_.position, v = Vec3d::Zero(), target = right_.position;
  if (move_) {
    p = move_->position(t);
    v = move_->velocity(t);
    target = move_->to;
  }
  OperatorFrame f;
  f.timestamp = t;
  f.right = hand_frame(DeviceId::SIGMA_R, p, right_.orientation, v, Vec3d::Zero(), 0.0, target, imp_,
                       profile_.tremor_sigma * tape_.tremor_right.at(tick));
  f.left = hand_frame(DeviceId::SIGMA_L, left_.position, left_.orientation, Vec3d::Zero(), Vec3d::Zero(), 0.0,
                      left_.position, imp_, profile_.tremor_sigma * tape_.tremor_left.at(tick));
  return f;
}

// ---- suturing ----

std::vector<std::pair<int, RawGestureLabel>> suturing_script(int throws) {
  if (throws < 1) throw ConfigError("suturing_script: throws must be >= 1");
  std::vector<std::pair<int, RawGestureLabel>> s;
  for (int k = 0; k < throws; ++k) {
    if (k == 0) {
      s.emplace_back(k, kG1);
      s.emplace_back(k, kG5);
    }
    for (RawGestureLabel g : {kG2, kG3, kG6}) s.emplace_back(k, g);
    if (k < 2) s.emplace_back(k, kG10);
    s.emplace_back(k, kG4);
    s.emplace_back(k, kG8);
    if (k == throws - 1) s.emplace_back(k, kG11);
  }
  return s;
}

SuturingOperator::SuturingOperator(const OperatorProfile& profile, const SimConfig& sim, int throws,
                                   std::uint64_t seed, double height)
    : profile_(profile),
      sim_(sim),
      height_(height),
      tape_(seed),
      imp_(Impedanced::defaults()),
      observer_(profile.reaction_latency, sim.tick),
      script_(suturing_script(throws)) {
  profile_.validate();
  sim_.validate();
  for (int k = 0; k < throws; ++k) {
    const Vec3d z = tape_.orientation.at(static_cast<std::size_t>(k));
    const double mag = std::max(0.0, profile_.orientation_error_mean + profile_.orientation_error_sd * z.x());
    const double phi = std::atan2(z.z(), z.y());
    error_angles_.push_back(deg(mag));
    errors_.push_back(Rot3d::axis_angle(Vec3d(0.0, std::cos(phi), std::sin(phi)), deg(mag)));
  }
  const Posed r = right_start(sim_), l = left_start(sim_);
  right_ = {r.position, errors_[0], kClosed};
  left_ = {l.position, l.orientation, kOpen};
  plan_r_ = right_;
  plan_l_ = left_;
}

Posed SuturingOperator::right_start(const SimConfig& sim) { return Posed{sim.start, Rot3d()}; }

Posed SuturingOperator::left_start(const SimConfig& sim) {
  return Posed{Vec3d(sim.start.x() + sim.entry_offsets.front() + 0.020, sim.entry_y + 0.018, 0.025), Rot3d()};
}

Vec3d SuturingOperator::entry(int j) const {
  const auto n = static_cast<int>(sim_.entry_offsets.size());
  const double x = sim_.entry_offsets[static_cast<std::size_t>(std::clamp(j, 0, n - 1))];
  return Vec3d(sim_.start.x() + x, sim_.entry_y, 0.0);
}

int SuturingOperator::throw_index() const { return done() ? script_.back().first : script_[step_].first; }

RawGestureLabel SuturingOperator::gesture() const { return script_[std::min(step_, script_.size() - 1)].second; }

double SuturingOperator::orientation_error(int k) const { return error_angles_.at(static_cast<std::size_t>(k)); }

double SuturingOperator::jitter(std::size_t slot, double base) {
  const double z = tape_.timing.at(step_ * kDrawsPerStep + slot).x();
  return base * profile_.pace * std::clamp(1.0 + profile_.timing_jitter * z, 0.6, 1.6);
}

Vec3d SuturingOperator::motor_noise(std::size_t slot, double distance) {
  return tape_.motor.at(step_ * kDrawsPerStep + std::min(slot, kDrawsPerStep - 1)) *
         (profile_.motor_noise_gain * distance + profile_.motor_noise_floor);
}

void SuturingOperator::move_right(const Vec3d& aim, std::size_t slot) {
  plan_r_.position = aim + motor_noise(slot, (aim - plan_r_.position).norm());
}

void SuturingOperator::move_left(const Vec3d& aim, std::size_t slot) {
  plan_l_.position = aim + motor_noise(slot, (aim - plan_l_.position).norm());
}

void SuturingOperator::orient_right(const Rot3d& nominal) {
  plan_r_.orientation = errors_[static_cast<std::size_t>(throw_index())] * nominal;
}

void SuturingOperator::push_segment(double duration) { plan_.push_back(Segment{plan_r_, plan_l_, duration}); }

void SuturingOperator::begin_gesture(double t) {
  seg_t0_ = t;
  const int j = throw_index();
  const Vec3d e = entry(j);
  const Vec3d home = entry(j + 1) + Vec3d(0.020, 0.018, 0.025);
  switch (gesture()) {
    case kG1: {
      const double d = jitter(0, 3.5);
      const Vec3d needle = e + Vec3d(-0.010, 0.015, 0.012);
      move_right(needle + Vec3d(0, 0, 0.004), 1);
      orient_right(Rot3d());
      plan_r_.gripper = kOpen;
      push_segment(0.6 * d);
      move_right(needle, 2);
      plan_r_.gripper = kClosed;
      push_segment(0.4 * d);
      break;
    }
    case kG5: {
      const double d = jitter(0, 3.0);
      move_right(e + Vec3d(-0.005, 0.008, 0.018), 1);
      orient_right(Rot3d::about_z(deg(35.0)));
      push_segment(0.5 * d);
      move_right(e + Vec3d(-0.002, 0.004, 0.015), 2);
      orient_right(Rot3d());
      push_segment(0.5 * d);
      break;
    }
    case kG2: {
      goal_ = e + Vec3d(0, 0, height_);
      const double dist = (goal_ - plan_r_.position).norm();
      move_right(goal_, 1);
      orient_right(Rot3d());
      push_segment(fitts_duration(profile_, dist));
      positioning_ = true;
      corrections_ = 0;
      hold_until_ = -1.0;
      break;
    }
    case kG3: {
      const double d = jitter(0, 4.0);
      plan_r_.position += Vec3d(0, -0.006, -0.004) + motor_noise(1, 0.0);
      orient_right(Rot3d::about_x(deg(100.0)));
      push_segment(d);
      break;
    }
    case kG6: {
      const double d = jitter(0, 5.0);
      plan_r_.position += Vec3d(0, 0, 0.003);
      plan_r_.gripper = kOpen;
      move_left(e + Vec3d(0, -0.010, 0.005), 1);
      plan_l_.gripper = kOpen;
      push_segment(0.35 * d);
      plan_l_.gripper = kClosed;
      push_segment(0.15 * d);
      move_left(e + Vec3d(0, -0.020, 0.035), 2);
      push_segment(0.5 * d);
      break;
    }
    case kG10: {
      const double d = jitter(0, 3.5);
      const Vec3d c = plan_l_.position;
      for (double dy : {0.008, -0.008, 0.008, 0.0}) {
        plan_l_.position = c + Vec3d(0, dy, 0);
        push_segment(0.25 * d);
      }
      break;
    }
    case kG4: {
      const double d = jitter(0, 4.5);
      const Vec3d meet = e + Vec3d(0.005, 0.0, 0.025);
      move_right(meet + Vec3d(-0.003, 0.003, 0), 1);
      orient_right(Rot3d());
      move_left(meet + Vec3d(0.003, -0.003, 0), 2);
      push_segment(0.6 * d);
      plan_r_.gripper = kClosed;
      plan_l_.gripper = kOpen;
      push_segment(0.4 * d);
      break;
    }
    case kG8: {
      const double d = jitter(0, 3.0);
      orient_right(Rot3d::about_z(deg(60.0)));
      move_left(home, 1);
      push_segment(0.5 * d);
      orient_right(Rot3d());
      push_segment(0.5 * d);
      break;
    }
    case kG11: {
      const double d = jitter(0, 3.0);
      move_left(entry(j) + Vec3d(0.040, 0.030, 0.040), 1);
      plan_l_.gripper = kOpen;
      push_segment(d);
      break;
    }
    default:
      throw ConfigError("SuturingOperator: unscripted gesture");
  }
}

void SuturingOperator::plan_positioning(double t) {
  if (hold_until_ < 0.0) {
    const double since = t - seg_t0_;
    if (since < profile_.reaction_latency - 1e-9) return;
    if (observer_.observed_speed() >= profile_.settle_speed && since < profile_.max_settle) return;
    const Vec3d err = goal_ - observer_.observed().pose.position;
    if (err.norm() > profile_.aim_tolerance && corrections_ < 8) {
      ++corrections_;
      seg_t0_ = t;
      move_right(plan_r_.position + err, 1 + corrections_);
      push_segment(fitts_duration(profile_, err.norm()));
      return;
    }
    hold_until_ = t + jitter(12, 1.5);
    wobble_ = 0;
  }
  seg_t0_ = t;
  if (t < hold_until_) {
    orient_right(Rot3d::about_z(deg(wobble_ % 2 ? -3.0 : 3.0)));
    ++wobble_;
    push_segment(0.5);
  } else if (wobble_ > 0) {
    orient_right(Rot3d());
    wobble_ = 0;
    push_segment(0.25);
  } else {
    positioning_ = false;
  }
}

OperatorFrame SuturingOperator::step(const std::array<ManipulatorState, 2>& tools, std::uint64_t tick) {
  const double t = static_cast<double>(tick) * sim_.tick;
  observer_.push(tools);

  if (!started_ && !done()) {
    begin_gesture(t);
    started_ = true;
  }
  for (int guard = 0; guard < 64 && !done(); ++guard) {
    while (!plan_.empty() && t >= seg_t0_ + plan_.front().duration) {
      seg_t0_ += plan_.front().duration;
      right_ = plan_.front().right;
      left_ = plan_.front().left;
      plan_.pop_front();
    }
    if (!plan_.empty()) break;
    if (positioning_) {
      plan_positioning(t);
      if (positioning_ || !plan_.empty()) break;
    }
    ++step_;
    if (done()) break;
    begin_gesture(t);
  }

  HandKey r = right_, l = left_;
  Vec3d vr = Vec3d::Zero(), vl = Vec3d::Zero(), wr = Vec3d::Zero(), wl = Vec3d::Zero();
  Vec3d target_r = right_.position, target_l = left_.position;
  if (!plan_.empty()) {
    const Segment& s = plan_.front();
    const MinJerk mj{Vec3d::Zero(), Vec3d::Ones(), seg_t0_, s.duration};
    const double a = mj.phase(t), da = mj.phase_rate(t);
    auto interpolate = [&](const HandKey& from, const HandKey& to, HandKey& out, Vec3d& v, Vec3d& w) {
      out.position = from.position + (to.position - from.position) * a;
      v = (to.position - from.position) * da;
      const Eigen::Quaterniond q0 = from.orientation.quaternion(), q1 = to.orientation.quaternion();
      out.orientation = Rot3d::from_quaternion(q0.slerp(a, q1));
      const Eigen::AngleAxisd rel(q1 * q0.inverse());
      double angle = rel.angle();
      Vec3d axis = rel.axis();
      if (angle > std::numbers::pi) {
        angle = 2.0 * std::numbers::pi - angle;
        axis = -axis;
      }
      w = axis * angle * da;
      out.gripper = from.gripper + (to.gripper - from.gripper) * a;
    };
    interpolate(right_, s.right, r, vr, wr);
    interpolate(left_, s.left, l, vl, wl);
    target_r = s.right.position;
    target_l = s.left.position;
  }

  OperatorFrame f;
  f.timestamp = t;
  f.gesture = gesture();
  f.right = hand_frame(DeviceId::SIGMA_R, r.position, r.orientation, vr, wr, r.gripper, target_r, imp_,
                       profile_.tremor_sigma * tape_.tremor_right.at(tick));
  f.left = hand_frame(DeviceId::SIGMA_L, l.position, l.orientation, vl, wl, l.gripper, target_l, imp_,
                      profile_.tremor_sigma * tape_.tremor_left.at(tick));
  const RawGestureLabel g = gesture();
  f.pedal = (g == kG2 || g == kG3) &&
            perpendicularity_error(observer_.observed().pose.orientation, TaskFramed{}) > profile_.pedal_threshold;
  return f;
}

}  // namespace ciac
