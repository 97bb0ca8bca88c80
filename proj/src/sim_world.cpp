#include "ciac/sim_world.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ciac {

using nlohmann::json;

void OcclusionConfig::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("OcclusionConfig: rate must be in [0,1]");
  if (!(mean_episode_ticks >= 1.0)) throw ConfigError("OcclusionConfig: mean_episode_ticks must be >= 1");
}

std::vector<std::uint8_t> markov_visibility(const OcclusionConfig& cfg, std::size_t ticks, std::mt19937_64& rng) {
  cfg.validate();
  std::vector<std::uint8_t> visible(ticks, 1);
  if (cfg.rate <= 0.0) return visible;
  if (cfg.rate >= 1.0) {
    std::fill(visible.begin(), visible.end(), 0);
    return visible;
  }
  // Two-state chain with stationary occluded fraction rate and mean occluded run length L.
  const double recover = 1.0 / cfg.mean_episode_ticks;
  const double onset = std::min(1.0, cfg.rate * recover / (1.0 - cfg.rate));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  bool occluded = u(rng) < cfg.rate;
  for (std::size_t t = 0; t < ticks; ++t) {
    visible[t] = occluded ? 0 : 1;
    const double r = u(rng);
    occluded = occluded ? !(r < recover) : (r < onset);
  }
  return visible;
}

OcclusionTimeline occlusion_timeline(const OcclusionConfig& kd, const OcclusionConfig& ch, std::size_t ticks,
                                     std::uint64_t seed) {
  std::mt19937_64 kd_rng(seed * 2 + 1);
  std::mt19937_64 ch_rng(seed * 2 + 2);
  OcclusionTimeline t;
  t.kd_visible = markov_visibility(kd, ticks, kd_rng);
  t.ch_visible = markov_visibility(ch, ticks, ch_rng);
  return t;
}

VisibilitySample OcclusionTimeline::at(std::size_t tick, double tick_seconds) const {
  VisibilitySample v;
  v.timestamp = static_cast<double>(tick) * tick_seconds;
  if (kd_visible.empty()) {
    v.kd_visible = v.ch_visible = true;
    return v;
  }
  const std::size_t i = std::min(tick, kd_visible.size() - 1);
  v.kd_visible = kd_visible[i] != 0;
  v.ch_visible = ch_visible[i] != 0;
  return v;
}

double OcclusionTimeline::occluded_fraction() const {
  if (kd_visible.empty()) return 0.0;
  double occluded = 0.0;
  for (std::size_t i = 0; i < kd_visible.size(); ++i) occluded += (kd_visible[i] ? 0.0 : 1.0) + (ch_visible[i] ? 0.0 : 1.0);
  return occluded / (2.0 * static_cast<double>(kd_visible.size()));
}

void SimConfig::validate() const {
  if (!(tick > 0.0)) throw ConfigError("SimConfig: tick must be positive");
  if (delay_ticks < 0) throw ConfigError("SimConfig: delay_ticks must be non-negative");
  if (!(tracking_time_constant > 0.0)) throw ConfigError("SimConfig: tracking_time_constant must be positive");
  if (!(max_speed > 0.0) || !(max_angular_speed > 0.0)) throw ConfigError("SimConfig: speed limits must be positive");
  if (entry_offsets.empty()) throw ConfigError("SimConfig: no entry points");
  for (std::size_t i = 1; i < entry_offsets.size(); ++i)
    if (!(entry_offsets[i] > entry_offsets[i - 1])) throw ConfigError("SimConfig: entry offsets must increase");
  kd_occlusion.validate();
  ch_occlusion.validate();
}

EntryPointSet SimConfig::entry_points(double height) const {
  std::vector<Vec3d> pts;
  for (double x : entry_offsets) pts.emplace_back(start.x() + x, entry_y, height);
  return EntryPointSet(std::move(pts));
}

KinematicSample ManipulatorState::sample(double timestamp) const {
  KinematicSample s;
  s.device = device;
  s.position = pose.position;
  s.orientation = pose.orientation;
  s.linear_velocity = linear_velocity;
  s.angular_velocity = angular_velocity;
  s.gripper_angle = gripper;
  s.timestamp = timestamp;
  return s;
}

KinematicSample HandFrame::sample(double timestamp) const {
  KinematicSample s;
  s.device = device;
  s.position = pose.position;
  s.orientation = pose.orientation;
  s.linear_velocity = velocity;
  s.angular_velocity = angular_velocity;
  s.gripper_angle = gripper;
  s.timestamp = timestamp;
  return s;
}

bool track_command(ManipulatorState& m, const ToolCommand& cmd, const SimConfig& cfg) {
  if (!cmd.pose.position.allFinite() || !cmd.pose.orientation.matrix().allFinite() || !std::isfinite(cmd.gripper)) {
    m.linear_velocity.setZero();
    m.angular_velocity.setZero();
    return false;
  }
  const double alpha = 1.0 - std::exp(-cfg.tick / cfg.tracking_time_constant);

  Vec3d delta = alpha * (cmd.pose.position - m.pose.position);
  const double max_step = cfg.max_speed * cfg.tick;
  if (delta.norm() > max_step) delta *= max_step / delta.norm();
  m.pose.position += delta;
  m.linear_velocity = delta / cfg.tick;

  if (cmd.pose.orientation.matrix() == m.pose.orientation.matrix()) {
    m.angular_velocity.setZero();
  } else {
    const Eigen::Quaterniond q0 = m.pose.orientation.quaternion();
    Eigen::Quaterniond q1 = cmd.pose.orientation.quaternion();
    const double gap = q0.angularDistance(q1);
    double frac = alpha;
    const double max_turn = cfg.max_angular_speed * cfg.tick;
    if (gap * frac > max_turn) frac = max_turn / gap;
    const Eigen::Quaterniond q = q0.slerp(frac, q1);
    const Eigen::AngleAxisd step(q * q0.inverse());
    m.pose.orientation = Rot3d::from_quaternion(q);
    m.angular_velocity = step.axis() * (step.angle() / cfg.tick);
  }
  m.gripper += alpha * (cmd.gripper - m.gripper);
  return true;
}

std::vector<Posed> traditional_command(std::span<const Posed> hand, int delay_ticks) {
  if (delay_ticks < 0) throw ConfigError("traditional_command: delay must be non-negative");
  std::vector<Posed> out;
  out.reserve(hand.size());
  for (std::size_t t = 0; t < hand.size(); ++t)
    out.push_back(hand[t >= static_cast<std::size_t>(delay_ticks) ? t - static_cast<std::size_t>(delay_ticks) : 0]);
  return out;
}

double MinJerk::phase(double t) const {
  const double s = std::clamp((t - t0) / duration, 0.0, 1.0);
  return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}

double MinJerk::phase_rate(double t) const {
  if (t <= t0 || t >= t0 + duration) return 0.0;
  const double s = (t - t0) / duration;
  return 30.0 * s * s * (1.0 - s) * (1.0 - s) / duration;
}

Vec3d MinJerk::position(double t) const { return from + (to - from) * phase(t); }
Vec3d MinJerk::velocity(double t) const { return (to - from) * phase_rate(t); }

Vec3d synthesize_operator_force(const Vec3d& true_target, const Vec3d& x, const Vec3d& xdot, const Impedanced& imp,
                                const Vec3d& noise) {
  return operator_force(Vec3d(true_target + noise), x, xdot, imp);
}

const Vec3d& NoiseStream::at(std::size_t i) {
  while (draws_.size() <= i) {
    const double a = normal_(rng_);
    const double b = normal_(rng_);
    const double c = normal_(rng_);
    draws_.emplace_back(a, b, c);
  }
  return draws_[i];
}

NoiseTape::NoiseTape(std::uint64_t seed) {
  std::seed_seq seq{seed, seed >> 32, std::uint64_t{0x5eed}};
  std::array<std::uint64_t, 5> s{};
  seq.generate(s.begin(), s.end());
  tremor_right = NoiseStream(s[0]);
  tremor_left = NoiseStream(s[1]);
  motor = NoiseStream(s[2]);
  orientation = NoiseStream(s[3]);
  timing = NoiseStream(s[4]);
}

// ---- world ----

World::World(const SimConfig& cfg, const Posed& psm1_start, const Posed& psm2_start,
             std::optional<OcclusionTimeline> occlusion)
    : cfg_(cfg), delay_(cfg.delay_ticks) {
  cfg_.validate();
  tools_[0].device = DeviceId::PSM1;
  tools_[0].pose = psm1_start;
  tools_[1].device = DeviceId::PSM2;
  tools_[1].pose = psm2_start;
  if (occlusion) occlusion_ = std::move(*occlusion);
}

const OperatorFrame& World::deliver(const OperatorFrame& live) {
  delivered_ = delay_.push(live);
  return delivered_;
}

VisibilitySample World::visibility() const {
  VisibilitySample v = occlusion_.at(static_cast<std::size_t>(tick_), cfg_.tick);
  if (forced_occlusion_) v.kd_visible = v.ch_visible = false;
  return v;
}

SimRecord World::advance(const std::array<ToolCommand, 2>& commands, const TaskFramed& frame) {
  SimRecord r;
  r.tick = tick_;
  r.time = time();
  const VisibilitySample v = visibility();
  r.kd_visible = v.kd_visible;
  r.ch_visible = v.ch_visible;
  for (std::size_t i = 0; i < 2; ++i)
    if (!track_command(tools_[i], commands[i], cfg_)) r.rejected = true;
  r.tools = tools_;
  r.hands = delivered_;
  r.perpendicularity = perpendicularity_error(tools_[0].pose.orientation, frame);
  ++tick_;
  return r;
}

// ---- log serialization ----

namespace {

json vec_json(const Vec3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3d vec_from(const json& j) { return Vec3d(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

json rot_json(const Rot3d& r) {
  const auto m = r.row_major();
  return json(std::vector<double>(m.begin(), m.end()));
}

Rot3d rot_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 9) throw ConfigError("rotation needs 9 values");
  return Rot3d::from_row_major(std::span<const double, 9>(v.data(), 9), 1e-6);
}

json tool_json(const ManipulatorState& m) {
  return {{"dev", static_cast<int>(m.device)},
          {"p", vec_json(m.pose.position)},
          {"R", rot_json(m.pose.orientation)},
          {"v", vec_json(m.linear_velocity)},
          {"w", vec_json(m.angular_velocity)},
          {"g", m.gripper}};
}

ManipulatorState tool_from(const json& j) {
  ManipulatorState m;
  m.device = static_cast<DeviceId>(j.at("dev").get<int>());
  m.pose.position = vec_from(j.at("p"));
  m.pose.orientation = rot_from(j.at("R"));
  m.linear_velocity = vec_from(j.at("v"));
  m.angular_velocity = vec_from(j.at("w"));
  m.gripper = j.at("g").get<double>();
  return m;
}

json hand_json(const HandFrame& h) {
  return {{"dev", static_cast<int>(h.device)},
          {"p", vec_json(h.pose.position)},
          {"R", rot_json(h.pose.orientation)},
          {"v", vec_json(h.velocity)},
          {"w", vec_json(h.angular_velocity)},
          {"g", h.gripper},
          {"u", vec_json(h.force)},
          {"target", vec_json(h.true_target)}};
}

HandFrame hand_from(const json& j) {
  HandFrame h;
  h.device = static_cast<DeviceId>(j.at("dev").get<int>());
  h.pose.position = vec_from(j.at("p"));
  h.pose.orientation = rot_from(j.at("R"));
  h.velocity = vec_from(j.at("v"));
  h.angular_velocity = vec_from(j.at("w"));
  h.gripper = j.at("g").get<double>();
  h.force = vec_from(j.at("u"));
  h.true_target = vec_from(j.at("target"));
  return h;
}

}  // namespace

std::string record_to_json(const SimRecord& r) {
  const ControlTrace& c = r.control;
  json j;
  j["tick"] = r.tick;
  j["t"] = r.time;
  j["tools"] = json::array({tool_json(r.tools[0]), tool_json(r.tools[1])});
  j["hands"] = {{"right", hand_json(r.hands.right)}, {"left", hand_json(r.hands.left)},
                {"pedal", r.hands.pedal},           {"clutch", r.hands.clutch},
                {"gesture", r.hands.gesture},       {"ts", r.hands.timestamp}};
  j["kd"] = r.kd_visible;
  j["ch"] = r.ch_visible;
  j["rejected"] = r.rejected;
  j["perp"] = r.perpendicularity;
  j["ctl"] = {{"mode", c.mode},
              {"tau_h_hat", vec_json(c.tau_h_hat)},
              {"tau_r", vec_json(c.tau_r)},
              {"tau", vec_json(c.tau)},
              {"lambda", vec_json(c.lambda)},
              {"lambda_scalar", c.lambda_scalar},
              {"surgeme_true", c.surgeme_true},
              {"surgeme", c.surgeme_emitted},
              {"probs", std::vector<double>(c.probabilities.data(), c.probabilities.data() + kGestureClassCount)},
              {"entry", c.entry_index},
              {"auto_orient", c.auto_orient},
              {"rate_limited", c.rate_limited},
              {"stale", c.stale},
              {"goal", c.goal_index},
              {"reached", c.goal_reached}};
  return j.dump();
}

SimRecord record_from_json(const std::string& line, std::size_t row) {
  try {
    const json j = json::parse(line);
    SimRecord r;
    r.tick = j.at("tick").get<std::uint64_t>();
    r.time = j.at("t").get<double>();
    r.tools[0] = tool_from(j.at("tools").at(0));
    r.tools[1] = tool_from(j.at("tools").at(1));
    const json& h = j.at("hands");
    r.hands.right = hand_from(h.at("right"));
    r.hands.left = hand_from(h.at("left"));
    r.hands.pedal = h.at("pedal").get<bool>();
    r.hands.clutch = h.at("clutch").get<bool>();
    r.hands.gesture = h.at("gesture").get<int>();
    r.hands.timestamp = h.at("ts").get<double>();
    r.kd_visible = j.at("kd").get<bool>();
    r.ch_visible = j.at("ch").get<bool>();
    r.rejected = j.at("rejected").get<bool>();
    r.perpendicularity = j.at("perp").get<double>();
    const json& c = j.at("ctl");
    ControlTrace& t = r.control;
    t.mode = c.at("mode").get<int>();
    t.tau_h_hat = vec_from(c.at("tau_h_hat"));
    t.tau_r = vec_from(c.at("tau_r"));
    t.tau = vec_from(c.at("tau"));
    t.lambda = vec_from(c.at("lambda"));
    t.lambda_scalar = c.at("lambda_scalar").get<double>();
    t.surgeme_true = c.at("surgeme_true").get<int>();
    t.surgeme_emitted = c.at("surgeme").get<int>();
    const auto probs = c.at("probs").get<std::vector<double>>();
    if (probs.size() != static_cast<std::size_t>(kGestureClassCount)) throw ConfigError("probs needs 5 values");
    for (int k = 0; k < kGestureClassCount; ++k) t.probabilities[k] = probs[static_cast<std::size_t>(k)];
    t.entry_index = c.at("entry").get<int>();
    t.auto_orient = c.at("auto_orient").get<bool>();
    t.rate_limited = c.at("rate_limited").get<bool>();
    t.stale = c.at("stale").get<bool>();
    t.goal_index = c.at("goal").get<int>();
    t.goal_reached = c.at("reached").get<bool>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad log record: ") + e.what(), row);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("bad log record: ") + e.what(), row);
  }
}

void SimEventLog::write(std::ostream& out) const {
  const json h = {{"format", kSimLogFormat},
                  {"version", kSimLogVersion},
                  {"experiment", header.experiment},
                  {"mode", header.mode},
                  {"seed", header.seed},
                  {"config", header.config},
                  {"records", records.size()}};
  out << h.dump() << '\n';
  for (const auto& r : records) out << record_to_json(r) << '\n';
}

void SimEventLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  write(out);
}

SimEventLog SimEventLog::read(std::istream& in) {
  SimEventLog log;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty log", 0);
  try {
    const json h = json::parse(line);
    if (h.at("format") != kSimLogFormat) throw ParseError("not a simulation log", 0);
    if (h.at("version").get<int>() != kSimLogVersion) throw ParseError("unsupported log version", 0);
    log.header.experiment = h.at("experiment").get<std::string>();
    log.header.mode = h.at("mode").get<std::string>();
    log.header.seed = h.at("seed").get<std::uint64_t>();
    log.header.config = h.at("config").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad log header: ") + e.what(), 0);
  }
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    log.records.push_back(record_from_json(line, row));
  }
  return log;
}

SimEventLog SimEventLog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return read(in);
}

}  // namespace ciac
