#include "ciac/teleop.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ciac/config.hpp"

namespace ciac {

using nlohmann::json;

std::string_view to_string(Hand h) { return h == Hand::Right ? "right" : "left"; }

Hand parse_hand(std::string_view s) {
  if (s == "right") return Hand::Right;
  if (s == "left") return Hand::Left;
  throw ProtocolError("unknown hand: " + std::string(s));
}

// ---- wire ----

namespace {

json vec_json(const Vec3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3d vec_from(const json& j, const char* name) {
  if (!j.is_array() || j.size() != 3) throw ProtocolError(std::string(name) + ": expected 3 numbers");
  Vec3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw ProtocolError(std::string(name) + ": expected 3 numbers");
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  if (!v.allFinite()) throw ProtocolError(std::string(name) + ": non-finite");
  return v;
}

double number_from(const json& j, const char* name) {
  if (!j.is_number()) throw ProtocolError(std::string(name) + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ProtocolError(std::string(name) + ": non-finite");
  return v;
}

bool bool_from(const json& j, const char* name) {
  if (!j.is_boolean()) throw ProtocolError(std::string(name) + ": expected a boolean");
  return j.get<bool>();
}

Rot3d rotation_from(const json& j) {
  try {
    if (j.contains("R")) {
      const json& r = j.at("R");
      if (!r.is_array() || r.size() != 9) throw ProtocolError("R: expected 9 numbers");
      std::array<double, 9> m{};
      for (std::size_t i = 0; i < 9; ++i) m[i] = number_from(r[i], "R");
      return Rot3d::from_row_major(std::span<const double, 9>(m), 1e-6);
    }
    const json& q = j.at("q");
    if (!q.is_array() || q.size() != 4) throw ProtocolError("q: expected [w,x,y,z]");
    const Eigen::Quaterniond quat(number_from(q[0], "q"), number_from(q[1], "q"), number_from(q[2], "q"),
                                  number_from(q[3], "q"));
    if (quat.norm() < 1e-9) throw ProtocolError("q: zero quaternion");
    return Rot3d::from_quaternion(quat);
  } catch (const ConfigError& e) {
    throw ProtocolError(e.what());
  }
}

json frame(std::string_view type, std::uint64_t tick) {
  return {{"v", kProtocolVersion}, {"type", type}, {"tick", tick}};
}

}  // namespace

bool ClientInput::operator==(const ClientInput& o) const { return client_input_to_json(*this) == client_input_to_json(o); }

ClientInput parse_client_input(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("message must be an object");
  if (!j.contains("v")) throw ProtocolError("missing protocol version");
  if (!j.at("v").is_number_integer() || j.at("v").get<int>() != kProtocolVersion)
    throw ProtocolError("unsupported protocol version " + j.at("v").dump());
  if (!j.contains("tick") || !j.at("tick").is_number_unsigned()) throw ProtocolError("missing tick");
  if (j.value("type", std::string("input")) != "input") throw ProtocolError("unknown message type");

  ClientInput in;
  in.tick = j.at("tick").get<std::uint64_t>();
  if (j.contains("hand")) {
    if (!j.at("hand").is_string()) throw ProtocolError("hand: expected a string");
    in.hand = parse_hand(j.at("hand").get<std::string>());
  }
  if (j.contains("p")) in.position = vec_from(j.at("p"), "p");
  if (j.contains("vel")) in.velocity = vec_from(j.at("vel"), "vel");
  if (j.contains("R") || j.contains("q")) in.orientation = rotation_from(j);
  if (j.contains("g")) in.gripper = number_from(j.at("g"), "g");
  if (j.contains("target")) in.target = vec_from(j.at("target"), "target");
  if (j.contains("force")) in.force = vec_from(j.at("force"), "force");
  if (j.contains("pedal")) in.pedal = bool_from(j.at("pedal"), "pedal");
  if (j.contains("clutch")) in.clutch = bool_from(j.at("clutch"), "clutch");
  if (j.contains("mode_toggle")) in.mode_toggle = bool_from(j.at("mode_toggle"), "mode_toggle");
  if (j.contains("occlude")) in.occlude = bool_from(j.at("occlude"), "occlude");
  if (j.contains("lambda_cap")) {
    const json& c = j.at("lambda_cap");
    if (c.is_null()) in.lambda_cap = std::optional<double>();
    else {
      const double v = number_from(c, "lambda_cap");
      if (v < 0.0 || v > 1.0) throw ProtocolError("lambda_cap: outside [0,1]");
      in.lambda_cap = v;
    }
  }
  if (j.contains("surgeme")) {
    const json& s = j.at("surgeme");
    if (s.is_null()) in.surgeme = std::optional<GestureClass>();
    else {
      if (!s.is_string()) throw ProtocolError("surgeme: expected a class name");
      const auto g = gesture_from_name(s.get<std::string>());
      if (!g) throw ProtocolError("surgeme: unknown class " + s.get<std::string>());
      in.surgeme = *g;
    }
  }
  if (j.contains("gesture")) {
    if (!j.at("gesture").is_number_integer()) throw ProtocolError("gesture: expected an integer");
    const int g = j.at("gesture").get<int>();
    if (g < 0 || g > kMaxRawLabel) throw ProtocolError("gesture: outside 0..15");
    in.gesture = g;
  }
  return in;
}

std::string client_input_to_json(const ClientInput& in) {
  json j = {{"v", kProtocolVersion}, {"type", "input"}, {"tick", in.tick}, {"hand", to_string(in.hand)}};
  if (in.position) j["p"] = vec_json(*in.position);
  if (in.velocity) j["vel"] = vec_json(*in.velocity);
  if (in.orientation) j["R"] = in.orientation->row_major();
  if (in.gripper) j["g"] = *in.gripper;
  if (in.target) j["target"] = vec_json(*in.target);
  if (in.force) j["force"] = vec_json(*in.force);
  if (in.pedal) j["pedal"] = *in.pedal;
  if (in.clutch) j["clutch"] = *in.clutch;
  if (in.mode_toggle) j["mode_toggle"] = true;
  if (in.occlude) j["occlude"] = *in.occlude;
  if (in.lambda_cap) j["lambda_cap"] = *in.lambda_cap ? json(**in.lambda_cap) : json(nullptr);
  if (in.surgeme) j["surgeme"] = *in.surgeme ? json(std::string(gesture_name(**in.surgeme))) : json(nullptr);
  if (in.gesture) j["gesture"] = *in.gesture;
  return j.dump();
}

std::string ack_frame(std::uint64_t tick) { return frame("ack", tick).dump(); }

std::string error_frame(std::uint64_t tick, std::string_view message) {
  json j = frame("error", tick);
  j["error"] = message;
  return j.dump();
}

// ---- setup and input log ----

SessionSetup SessionSetup::preset(std::string_view name) {
  SessionSetup s;
  if (name == "reach") {
    s.spec = ExperimentSpec::reach_defaults();
  } else if (name == "suture") {
    s.spec = ExperimentSpec::suture_defaults();
  } else if (name == "traditional") {
    s.spec = ExperimentSpec::reach_defaults();
    s.mode = TeleopMode::Traditional;
  } else {
    throw ConfigError("unknown session preset: " + std::string(name));
  }
  s.spec.seeds = {s.seed};
  return s;
}

void SessionInputLog::write(std::ostream& out) const {
  const json h = {{"format", kInputLogFormat},
                  {"version", kProtocolVersion},
                  {"session", setup.id},
                  {"mode", to_string(setup.mode)},
                  {"seed", setup.seed},
                  {"model", setup.model},
                  {"config", setup.spec.describe()}};
  out << h.dump() << '\n';
  for (std::size_t k = 0; k < ticks.size(); ++k) {
    json inputs = json::array();
    for (const auto& in : ticks[k]) inputs.push_back(json::parse(client_input_to_json(in)));
    out << json{{"tick", k}, {"inputs", inputs}}.dump() << '\n';
  }
}

void SessionInputLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  write(out);
}

SessionInputLog SessionInputLog::read(std::istream& in) {
  SessionInputLog log;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty input log", 0);
  try {
    const json h = json::parse(line);
    if (h.at("format") != kInputLogFormat) throw ParseError("not a session input log", 0);
    if (h.at("version").get<int>() != kProtocolVersion) throw ParseError("unsupported input log version", 0);
    log.setup.id = h.at("session").get<std::string>();
    log.setup.mode = parse_mode(h.at("mode").get<std::string>());
    log.setup.seed = h.at("seed").get<std::uint64_t>();
    log.setup.model = h.at("model").get<std::string>();
    const Config c = Config::from_dump(h.at("config").get<std::string>());
    const Experiment e = c.get("experiment.name", std::string("reach")) == "suture" ? Experiment::Suture : Experiment::Reach;
    log.setup.spec = spec_from_config(c, e);
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad input log header: ") + e.what(), 0);
  }
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    try {
      const json j = json::parse(line);
      if (j.at("tick").get<std::size_t>() != log.ticks.size()) throw ParseError("ticks out of order", row);
      std::vector<ClientInput> inputs;
      for (const auto& m : j.at("inputs")) inputs.push_back(parse_client_input(m.dump()));
      log.ticks.push_back(std::move(inputs));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad input row: ") + e.what(), row);
    } catch (const ProtocolError& e) {
      throw ParseError(std::string("bad input row: ") + e.what(), row);
    }
  }
  return log;
}

SessionInputLog SessionInputLog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return read(in);
}

// ---- session ----

namespace {

SimConfig seeded(SimConfig sim, std::uint64_t seed) {
  sim.seed = seed;
  return sim;
}

Vec3d entry_goal(const SimConfig& sim, std::size_t j, double height) {
  const std::size_t i = std::min(j, sim.entry_offsets.size() - 1);
  return Vec3d(sim.start.x() + sim.entry_offsets[i], sim.entry_y, height);
}

PipelineConfig pipeline_for(const SessionSetup& s) {
  PipelineConfig pc = s.spec.pipeline;
  pc.mode = s.mode;
  return pc;
}

}  // namespace

Session::Session(const SessionSetup& setup, ProbabilityModel model)
    : setup_(setup),
      sim_(seeded(setup.spec.sim, setup.seed)),
      world_(sim_, {sim_.start, Rot3d()}, SuturingOperator::left_start(sim_),
             occlusion_timeline(sim_.kd_occlusion, sim_.ch_occlusion, setup.spec.max_ticks, setup.seed)),
      pipe_(pipeline_for(setup), sim_, std::move(model)),
      imp_(Impedanced::defaults()) {
  setup_.spec.validate();
  hands_[0].pose = {sim_.start, Rot3d()};
  hands_[1].pose = SuturingOperator::left_start(sim_);
  log_.header.experiment = "session";
  log_.header.mode = std::string(to_string(setup_.mode));
  log_.header.seed = setup_.seed;
  log_.header.config = setup_.spec.describe();
  inputs_.setup = setup_;
}

std::string Session::handle_client_input(std::string_view text) {
  try {
    const ClientInput in = parse_client_input(text);
    queue(in);
    return ack_frame(ticks());
  } catch (const ProtocolError& e) {
    return error_frame(ticks(), e.what());
  }
}

void Session::queue(const ClientInput& in) {
  std::lock_guard lock(mutex_);
  pending_[static_cast<std::size_t>(in.hand)] = in;
}

bool Session::claim(Hand h) {
  std::lock_guard lock(mutex_);
  auto& c = claimed_[static_cast<std::size_t>(h)];
  if (c) return false;
  c = true;
  return true;
}

void Session::release(Hand h) {
  std::lock_guard lock(mutex_);
  claimed_[static_cast<std::size_t>(h)] = false;
}

std::size_t Session::clients() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(claimed_[0]) + static_cast<std::size_t>(claimed_[1]);
}

std::uint64_t Session::ticks() const {
  std::lock_guard lock(mutex_);
  return tick_;
}

void Session::apply(const ClientInput& in) {
  HandState& h = hands_[static_cast<std::size_t>(in.hand)];
  if (in.position) {
    h.velocity = in.velocity ? *in.velocity : (*in.position - h.pose.position) / sim_.tick;
    h.pose.position = *in.position;
    h.moved = true;
  } else if (in.velocity) {
    h.velocity = *in.velocity;
    h.moved = true;
  }
  if (in.orientation) h.pose.orientation = *in.orientation;
  if (in.gripper) h.gripper = *in.gripper;
  if (in.target) h.target = *in.target;
  if (in.force) h.force = *in.force;
  if (in.pedal) pedal_ = *in.pedal;
  if (in.clutch) clutch_ = *in.clutch;
  if (in.mode_toggle) {
    const TeleopMode now = toggled_.value_or(pipe_.mode());
    toggled_ = now == TeleopMode::Ciac ? TeleopMode::Traditional : TeleopMode::Ciac;
    pipe_.set_mode(*toggled_);
  }
  if (in.occlude) {
    occluded_ = *in.occlude;
    world_.force_occlusion(occluded_);
  }
  if (in.lambda_cap) pipe_.set_lambda_cap(*in.lambda_cap);
  if (in.surgeme) pipe_.set_surgeme(*in.surgeme);
  if (in.gesture) gesture_ = *in.gesture;
}

std::string Session::tick() {
  std::array<std::optional<ClientInput>, 2> pending;
  std::uint64_t tick;
  {
    std::lock_guard lock(mutex_);
    pending.swap(pending_);
    tick = tick_;
  }
  for (auto& h : hands_) h.moved = false;
  std::vector<ClientInput> applied;
  for (const auto& p : pending)
    if (p) {
      apply(*p);
      applied.push_back(*p);
    }
  inputs_.ticks.push_back(std::move(applied));
  for (auto& h : hands_)
    if (!h.moved) h.velocity.setZero();

  const double t = world_.time();
  OperatorFrame live;
  live.timestamp = t;
  live.pedal = pedal_;
  live.clutch = clutch_;
  live.gesture = gesture_;
  const DeviceId dev[2] = {DeviceId::SIGMA_R, DeviceId::SIGMA_L};
  for (std::size_t i = 0; i < 2; ++i) {
    HandFrame& f = i == 0 ? live.right : live.left;
    const HandState& h = hands_[i];
    f.device = dev[i];
    f.pose = h.pose;
    f.velocity = h.velocity;
    f.gripper = h.gripper;
    f.true_target = h.target.value_or(h.pose.position);
    f.force = h.force.value_or(synthesize_operator_force(f.true_target, h.pose.position, h.velocity, imp_));
  }

  const auto tools = world_.tools();
  const OperatorFrame& d = world_.deliver(live);
  ControlTrace tr;
  const auto cmds = pipe_.step(d, tools, world_.visibility(), t, tr);
  SimRecord rec = world_.advance(cmds, TaskFramed{});
  toggled_.reset();

  // Reaching sessions advance through the entry points like the scripted experiment.
  tr.goal_index = static_cast<int>(pipe_.entry_index());
  if (setup_.spec.experiment == Experiment::Reach) {
    const Vec3d goal = entry_goal(sim_, pipe_.entry_index(), setup_.spec.goal_height);
    dwell_ = (rec.tools[0].pose.position - goal).norm() <= setup_.spec.success_radius ? dwell_ + 1 : 0;
    tr.goal_reached = dwell_ >= setup_.spec.dwell_ticks;
    if (tr.goal_reached) {
      ++metrics_.goals_reached;
      pipe_.advance_entry();
      pipe_.restart_ramp(world_.time());
      dwell_ = 0;
    }
  }
  rec.control = tr;

  metrics_.ticks = rec.tick + 1;
  metrics_.elapsed = world_.time();
  if (tr.surgeme_emitted == tr.surgeme_true) ++correct_;
  metrics_.accuracy = static_cast<double>(correct_) / static_cast<double>(metrics_.ticks);
  if (tr.surgeme_true == code(GestureClass::Push)) {
    perp_sum_ += rec.perpendicularity;
    ++metrics_.push_ticks;
    metrics_.push_perpendicularity = perp_sum_ / static_cast<double>(metrics_.push_ticks);
  }
  if (rec.rejected) ++metrics_.rejected;

  std::string out = snapshot(rec);
  log_.records.push_back(std::move(rec));
  {
    std::lock_guard lock(mutex_);
    tick_ = tick + 1;
  }
  return out;
}

std::string Session::snapshot(const SimRecord& rec) const {
  const ControlTrace& c = rec.control;
  json tools = json::array();
  for (const auto& m : rec.tools)
    tools.push_back({{"p", vec_json(m.pose.position)}, {"R", m.pose.orientation.row_major()}, {"g", m.gripper}});
  json entries = json::array();
  const EntryPointSet eps = sim_.entry_points(setup_.spec.pipeline.controller.fixed_height);
  for (const auto& p : eps.points()) entries.push_back(vec_json(p));
  const auto& s = pipe_.stream();
  auto probs = [](const Probabilities& p) { return std::vector<double>(p.data(), p.data() + kGestureClassCount); };
  const auto emitted = gesture_from_code(c.surgeme_emitted).value_or(GestureClass::Other);
  const auto truth = gesture_from_code(c.surgeme_true).value_or(GestureClass::Other);
  json j = frame("state", rec.tick);
  j["session"] = setup_.id;
  j["t"] = rec.time;
  j["mode"] = to_string(static_cast<TeleopMode>(c.mode));
  j["tools"] = tools;
  j["tau_h_hat"] = vec_json(c.tau_h_hat);
  j["tau_r"] = vec_json(c.tau_r);
  j["tau"] = vec_json(c.tau);
  j["lambda"] = vec_json(c.lambda);
  j["lambda_scalar"] = c.lambda_scalar;
  j["surgeme"] = {{"emitted", gesture_name(emitted)},
                  {"true", gesture_name(truth)},
                  {"probabilities", probs(s.averaged)},
                  {"raw", probs(s.raw)}};
  j["entry_points"] = entries;
  j["entry_index"] = c.entry_index;
  j["visibility"] = {{"kd", rec.kd_visible}, {"ch", rec.ch_visible}};
  j["auto_orient"] = c.auto_orient;
  j["metrics"] = {{"ticks", metrics_.ticks},
                  {"elapsed", metrics_.elapsed},
                  {"accuracy", metrics_.accuracy},
                  {"push_perpendicularity", metrics_.push_perpendicularity},
                  {"push_ticks", metrics_.push_ticks},
                  {"goals_reached", metrics_.goals_reached},
                  {"rejected", metrics_.rejected}};
  j["record"] = json::parse(record_to_json(rec));
  return j.dump();
}

SimEventLog replay_session(const SessionInputLog& inputs, ProbabilityModel model) {
  Session s(inputs.setup, std::move(model));
  for (const auto& tick : inputs.ticks) {
    for (const auto& in : tick) s.queue(in);
    s.tick();
  }
  return s.log();
}

}  // namespace ciac
