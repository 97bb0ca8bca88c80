#include "ciac/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace ciac {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Drops a trailing comment and surrounding quotes.
std::string clean(const std::string& raw) {
  std::string v = raw;
  if (!v.empty() && v.front() != '"') {
    const auto hash = v.find('#');
    if (hash != std::string::npos) v = v.substr(0, hash);
  }
  v = trim(v);
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  return v;
}

double to_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("config " + key + ": not a number: " + s);
  return v;
}

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + num(v[i]);
  return s;
}

}  // namespace

Config Config::parse(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(std::string("config: ") + e.message(), e.line());
  }
  Config c;
  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      c.set(section, clean(node.data()));
      continue;
    }
    for (const auto& [key, leaf] : node) c.set(section + "." + key, clean(leaf.data()));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse(in);
}

Config Config::from_dump(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty()) c.set_assignment(line);
  return c;
}

void Config::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got " + assignment);
  set(trim(assignment.substr(0, eq)), clean(assignment.substr(eq + 1)));
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  read_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get(const std::string& key, double fallback) const {
  read_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : to_double(key, it->second);
}

long Config::get(const std::string& key, long fallback) const {
  const double v = get(key, static_cast<double>(fallback));
  if (v != std::floor(v)) throw ConfigError("config " + key + ": expected an integer");
  return static_cast<long>(v);
}

bool Config::get(const std::string& key, bool fallback) const {
  read_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config " + key + ": expected true or false");
}

std::vector<double> Config::get(const std::string& key, const std::vector<double>& fallback) const {
  read_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  return out;
}

std::vector<std::string> Config::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!read_.count(k)) out.push_back(k);
  return out;
}

std::string Config::dump() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
  return s;
}

std::string Config::ini() const {
  std::string s, section;
  for (const auto& [k, v] : values_)
    if (k.find('.') == std::string::npos) s += k + " = " + v + "\n";
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = k.substr(0, dot);
    if (sec != section) {
      s += (s.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    s += k.substr(dot + 1) + " = " + v + "\n";
  }
  return s;
}

ExperimentSpec spec_from_config(const Config& c, Experiment experiment) {
  ExperimentSpec s = experiment == Experiment::Reach ? ExperimentSpec::reach_defaults() : ExperimentSpec::suture_defaults();

  // experiment
  c.get("experiment.name", std::string());
  if (c.has("experiment.seeds")) {
    s.seeds.clear();
    for (double v : c.get("experiment.seeds", std::vector<double>{})) s.seeds.push_back(static_cast<std::uint64_t>(v));
  } else {
    s.seeds = seed_range(static_cast<std::uint64_t>(c.get("experiment.seed", 1L)),
                         static_cast<std::size_t>(c.get("experiment.repetitions", 20L)));
  }
  if (c.has("experiment.modes")) {
    s.modes.clear();
    std::stringstream ss(c.get("experiment.modes", std::string()));
    std::string m;
    while (std::getline(ss, m, ',')) s.modes.push_back(parse_mode(m));
  }
  s.throws = static_cast<int>(c.get("experiment.throws", static_cast<long>(s.throws)));
  s.goal_height = c.get("experiment.goal_height", s.goal_height);
  s.success_radius = c.get("experiment.success_radius", s.success_radius);
  s.dwell_ticks = static_cast<int>(c.get("experiment.dwell_ticks", static_cast<long>(s.dwell_ticks)));
  s.segment_timeout = c.get("experiment.segment_timeout", s.segment_timeout);
  s.insertion_max_error = c.get("experiment.insertion_max_error", s.insertion_max_error);
  s.max_ticks = static_cast<std::size_t>(c.get("experiment.max_ticks", static_cast<long>(s.max_ticks)));

  // sim
  SimConfig& m = s.sim;
  m.tick = c.get("sim.tick", m.tick);
  m.delay_ticks = static_cast<int>(c.get("sim.delay_ticks", static_cast<long>(m.delay_ticks)));
  m.tracking_time_constant = c.get("sim.tracking_time_constant", m.tracking_time_constant);
  m.max_speed = c.get("sim.max_speed", m.max_speed);
  m.max_angular_speed = c.get("sim.max_angular_speed", m.max_angular_speed);
  m.entry_offsets = c.get("sim.entry_offsets", m.entry_offsets);
  m.entry_y = c.get("sim.entry_y", m.entry_y);
  const auto start = c.get("sim.start", std::vector<double>{m.start.x(), m.start.y(), m.start.z()});
  if (start.size() != 3) throw ConfigError("config sim.start: expected three values");
  m.start = Vec3d(start[0], start[1], start[2]);
  m.kd_occlusion.rate = c.get("sim.kd_occlusion_rate", m.kd_occlusion.rate);
  m.kd_occlusion.mean_episode_ticks = c.get("sim.kd_occlusion_episode", m.kd_occlusion.mean_episode_ticks);
  m.ch_occlusion.rate = c.get("sim.ch_occlusion_rate", m.ch_occlusion.rate);
  m.ch_occlusion.mean_episode_ticks = c.get("sim.ch_occlusion_episode", m.ch_occlusion.mean_episode_ticks);

  // operator
  const std::string profile = c.get("operator.profile", std::string("novice"));
  if (profile == "novice") s.profile = OperatorProfile::novice();
  else if (profile == "expert") s.profile = OperatorProfile::expert();
  else if (profile == "noiseless") s.profile = OperatorProfile::noiseless();
  else throw ConfigError("config operator.profile: unknown profile " + profile);
  OperatorProfile& o = s.profile;
  o.reaction_latency = c.get("operator.reaction_latency", o.reaction_latency);
  o.tremor_sigma = c.get("operator.tremor_sigma", o.tremor_sigma);
  o.fitts_a = c.get("operator.fitts_a", o.fitts_a);
  o.fitts_b = c.get("operator.fitts_b", o.fitts_b);
  o.fitts_width = c.get("operator.fitts_width", o.fitts_width);
  o.motor_noise_gain = c.get("operator.motor_noise_gain", o.motor_noise_gain);
  o.motor_noise_floor = c.get("operator.motor_noise_floor", o.motor_noise_floor);
  o.aim_tolerance = c.get("operator.aim_tolerance", o.aim_tolerance);
  o.settle_speed = c.get("operator.settle_speed", o.settle_speed);
  o.max_settle = c.get("operator.max_settle", o.max_settle);
  o.orientation_error_mean = c.get("operator.orientation_error_mean", o.orientation_error_mean);
  o.orientation_error_sd = c.get("operator.orientation_error_sd", o.orientation_error_sd);
  o.pedal_threshold = c.get("operator.pedal_threshold", o.pedal_threshold);
  o.timing_jitter = c.get("operator.timing_jitter", o.timing_jitter);
  o.pace = c.get("operator.pace", o.pace);

  // pipeline
  PipelineConfig& p = s.pipeline;
  p.lambda_source = parse_lambda_source(c.get("pipeline.lambda_source", std::string(to_string(p.lambda_source))));
  p.lambda_fixed = c.get("pipeline.lambda_fixed", p.lambda_fixed);
  p.ramp_cap = c.get("pipeline.ramp_cap", p.ramp_cap);
  p.ramp_duration = c.get("pipeline.ramp_duration", p.ramp_duration);
  p.intent = parse_intent_source(c.get("pipeline.intent", std::string(to_string(p.intent))));
  p.auto_orient = c.get("pipeline.auto_orient", p.auto_orient);
  p.label_strategy = static_cast<int>(c.get("pipeline.label_strategy", static_cast<long>(p.label_strategy)));

  const double q = c.get("kalman.q_sigma", std::sqrt(p.kalman.process_noise(0, 0)));
  const double r = c.get("kalman.r_sigma", std::sqrt(p.kalman.measurement_noise(0, 0)));
  const double p0 = c.get("kalman.p0_sigma", std::sqrt(p.kalman.initial_covariance(0, 0)));
  p.kalman.process_noise = Mat3d::Identity() * (q * q);
  p.kalman.measurement_noise = Mat3d::Identity() * (r * r);
  p.kalman.initial_covariance = Mat3d::Identity() * (p0 * p0);
  p.kalman.maneuver_gate = c.get("kalman.maneuver_gate", p.kalman.maneuver_gate);

  ConfidenceParams& cp = p.confidence;
  cp.alpha0 = c.get("confidence.alpha0", cp.alpha0);
  cp.beta0 = c.get("confidence.beta0", cp.beta0);
  cp.w0 = c.get("confidence.w0", cp.w0);
  cp.w1 = c.get("confidence.w1", cp.w1);
  cp.window_n = static_cast<std::size_t>(c.get("confidence.window", static_cast<long>(cp.window_n)));
  cp.scale = c.get("confidence.scale", cp.scale);
  cp.offset = c.get("confidence.offset", cp.offset);
  cp.lambda_cap = c.get("confidence.lambda_cap", cp.lambda_cap);

  ControllerConfig& cc = p.controller;
  cc.fixed_height = c.get("controller.fixed_height", cc.fixed_height);
  cc.rate_limit = c.get("controller.rate_limit", cc.rate_limit);
  cc.advance_radius = c.get("controller.advance_radius", cc.advance_radius);
  cc.stale_after = c.get("controller.stale_after", cc.stale_after);

  p.stream.threshold = c.get("stream.threshold", p.stream.threshold);
  p.stream.ema_window = static_cast<std::size_t>(c.get("stream.ema_window", static_cast<long>(p.stream.ema_window)));

  s.validate();
  return s;
}

Config config_from_spec(const ExperimentSpec& s) {
  Config c;
  std::string seeds, modes;
  for (std::size_t i = 0; i < s.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(s.seeds[i]);
  for (std::size_t i = 0; i < s.modes.size(); ++i) modes += (i ? "," : "") + std::string(to_string(s.modes[i]));
  c.set("experiment.name", std::string(to_string(s.experiment)));
  c.set("experiment.seeds", seeds);
  c.set("experiment.modes", modes);
  c.set("experiment.throws", std::to_string(s.throws));
  c.set("experiment.goal_height", num(s.goal_height));
  c.set("experiment.success_radius", num(s.success_radius));
  c.set("experiment.dwell_ticks", std::to_string(s.dwell_ticks));
  c.set("experiment.segment_timeout", num(s.segment_timeout));
  c.set("experiment.insertion_max_error", num(s.insertion_max_error));
  c.set("experiment.max_ticks", std::to_string(s.max_ticks));

  const SimConfig& m = s.sim;
  c.set("sim.tick", num(m.tick));
  c.set("sim.delay_ticks", std::to_string(m.delay_ticks));
  c.set("sim.tracking_time_constant", num(m.tracking_time_constant));
  c.set("sim.max_speed", num(m.max_speed));
  c.set("sim.max_angular_speed", num(m.max_angular_speed));
  c.set("sim.entry_offsets", list(m.entry_offsets));
  c.set("sim.entry_y", num(m.entry_y));
  c.set("sim.start", list({m.start.x(), m.start.y(), m.start.z()}));
  c.set("sim.kd_occlusion_rate", num(m.kd_occlusion.rate));
  c.set("sim.kd_occlusion_episode", num(m.kd_occlusion.mean_episode_ticks));
  c.set("sim.ch_occlusion_rate", num(m.ch_occlusion.rate));
  c.set("sim.ch_occlusion_episode", num(m.ch_occlusion.mean_episode_ticks));

  const OperatorProfile& o = s.profile;
  c.set("operator.reaction_latency", num(o.reaction_latency));
  c.set("operator.tremor_sigma", num(o.tremor_sigma));
  c.set("operator.fitts_a", num(o.fitts_a));
  c.set("operator.fitts_b", num(o.fitts_b));
  c.set("operator.fitts_width", num(o.fitts_width));
  c.set("operator.motor_noise_gain", num(o.motor_noise_gain));
  c.set("operator.motor_noise_floor", num(o.motor_noise_floor));
  c.set("operator.aim_tolerance", num(o.aim_tolerance));
  c.set("operator.settle_speed", num(o.settle_speed));
  c.set("operator.max_settle", num(o.max_settle));
  c.set("operator.orientation_error_mean", num(o.orientation_error_mean));
  c.set("operator.orientation_error_sd", num(o.orientation_error_sd));
  c.set("operator.pedal_threshold", num(o.pedal_threshold));
  c.set("operator.timing_jitter", num(o.timing_jitter));
  c.set("operator.pace", num(o.pace));

  const PipelineConfig& p = s.pipeline;
  c.set("pipeline.lambda_source", std::string(to_string(p.lambda_source)));
  c.set("pipeline.lambda_fixed", num(p.lambda_fixed));
  c.set("pipeline.ramp_cap", num(p.ramp_cap));
  c.set("pipeline.ramp_duration", num(p.ramp_duration));
  c.set("pipeline.intent", std::string(to_string(p.intent)));
  c.set("pipeline.auto_orient", p.auto_orient ? "true" : "false");
  c.set("pipeline.label_strategy", std::to_string(p.label_strategy));
  c.set("kalman.q_sigma", num(std::sqrt(p.kalman.process_noise(0, 0))));
  c.set("kalman.r_sigma", num(std::sqrt(p.kalman.measurement_noise(0, 0))));
  c.set("kalman.p0_sigma", num(std::sqrt(p.kalman.initial_covariance(0, 0))));
  c.set("kalman.maneuver_gate", num(p.kalman.maneuver_gate));
  c.set("confidence.alpha0", num(p.confidence.alpha0));
  c.set("confidence.beta0", num(p.confidence.beta0));
  c.set("confidence.w0", num(p.confidence.w0));
  c.set("confidence.w1", num(p.confidence.w1));
  c.set("confidence.window", std::to_string(p.confidence.window_n));
  c.set("confidence.scale", num(p.confidence.scale));
  c.set("confidence.offset", num(p.confidence.offset));
  c.set("confidence.lambda_cap", num(p.confidence.lambda_cap));
  c.set("controller.fixed_height", num(p.controller.fixed_height));
  c.set("controller.rate_limit", num(p.controller.rate_limit));
  c.set("controller.advance_radius", num(p.controller.advance_radius));
  c.set("controller.stale_after", num(p.controller.stale_after));
  c.set("stream.threshold", num(p.stream.threshold));
  c.set("stream.ema_window", std::to_string(p.stream.ema_window));
  return c;
}

TrainConfig train_config_from(const Config& c) {
  TrainConfig t;
  t.learning_rate = c.get("train.learning_rate", t.learning_rate);
  t.batch_size = static_cast<std::size_t>(c.get("train.batch_size", static_cast<long>(t.batch_size)));
  t.epochs = static_cast<std::size_t>(c.get("train.epochs", static_cast<long>(t.epochs)));
  t.seed = static_cast<std::uint64_t>(c.get("train.seed", static_cast<long>(t.seed)));
  t.dropout = c.get("train.dropout", t.dropout);
  t.d_model = static_cast<int>(c.get("train.d_model", static_cast<long>(t.d_model)));
  t.heads = static_cast<int>(c.get("train.heads", static_cast<long>(t.heads)));
  t.ffn = static_cast<int>(c.get("train.ffn", static_cast<long>(t.ffn)));
  t.dense = static_cast<int>(c.get("train.dense", static_cast<long>(t.dense)));
  t.validate();
  return t;
}

}  // namespace ciac
