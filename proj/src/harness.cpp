#include "ciac/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ciac/config.hpp"

namespace ciac {

using nlohmann::json;

std::string_view to_string(Experiment e) { return e == Experiment::Reach ? "reach" : "suture"; }

ExperimentSpec ExperimentSpec::reach_defaults() {
  ExperimentSpec s;
  s.experiment = Experiment::Reach;
  s.pipeline.lambda_source = LambdaSource::LinearRamp;
  s.pipeline.fixed_surgeme = GestureClass::Push;
  s.seeds = seed_range(1, 20);
  return s;
}

ExperimentSpec ExperimentSpec::suture_defaults() {
  ExperimentSpec s;
  s.experiment = Experiment::Suture;
  s.pipeline.lambda_source = LambdaSource::Bayes;
  s.seeds = seed_range(1, 20);
  return s;
}

void ExperimentSpec::validate() const {
  sim.validate();
  profile.validate();
  pipeline.validate();
  if (seeds.empty()) throw ConfigError("ExperimentSpec: no seeds");
  if (modes.empty()) throw ConfigError("ExperimentSpec: no modes");
  if (throws < 1) throw ConfigError("ExperimentSpec: throws must be >= 1");
  if (!(success_radius > 0.0) || dwell_ticks < 1 || !(segment_timeout > 0.0))
    throw ConfigError("ExperimentSpec: bad success predicate");
  if (pipeline.lambda_source == LambdaSource::LinearRamp && pipeline.ramp_cap != 0.8)
    throw ConfigError("ExperimentSpec: the linear ramp is capped at 0.8");
}

std::string ExperimentSpec::describe() const { return config_from_spec(*this).dump(); }

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> s(count);
  std::iota(s.begin(), s.end(), first);
  return s;
}

// ---- runs ----

namespace {

SimEventLog new_log(const ExperimentSpec& spec, TeleopMode mode, std::uint64_t seed) {
  SimEventLog log;
  log.header.experiment = std::string(to_string(spec.experiment));
  log.header.mode = std::string(to_string(mode));
  log.header.seed = seed;
  log.header.config = spec.describe();
  return log;
}

std::optional<OcclusionTimeline> timeline_for(const ExperimentSpec& spec, std::uint64_t seed) {
  return occlusion_timeline(spec.sim.kd_occlusion, spec.sim.ch_occlusion, spec.max_ticks, seed);
}

Vec3d entry_point(const SimConfig& sim, int j) {
  const auto n = static_cast<int>(sim.entry_offsets.size());
  return Vec3d(sim.start.x() + sim.entry_offsets[static_cast<std::size_t>(std::clamp(j, 0, n - 1))], sim.entry_y, 0.0);
}

SimEventLog simulate_suturing(const ExperimentSpec& spec, TeleopMode mode, std::uint64_t seed,
                              const ProbabilityModel& model, std::vector<RecordingRow>* rows) {
  spec.validate();
  SimConfig sim = spec.sim;
  sim.seed = seed;
  World world(sim, SuturingOperator::right_start(sim), SuturingOperator::left_start(sim), timeline_for(spec, seed));
  SuturingOperator op(spec.profile, sim, spec.throws, seed, spec.goal_height);
  PipelineConfig pc = spec.pipeline;
  pc.mode = mode;
  Pipeline pipe(pc, sim, model);

  SimEventLog log = new_log(spec, mode, seed);
  int previous_true = -1;
  for (std::uint64_t tick = 0; !op.done() && tick < spec.max_ticks; ++tick) {
    const double t = world.time();
    const auto tools = world.tools();
    const OperatorFrame live = op.step(tools, tick);
    const OperatorFrame& d = world.deliver(live);
    if (rows) rows->push_back(make_row(tools, d, t));
    ControlTrace tr;
    const auto cmds = pipe.step(d, tools, world.visibility(), t, tr);
    SimRecord rec = world.advance(cmds, TaskFramed{});
    tr.goal_index = op.throw_index();
    if (tr.surgeme_true == code(GestureClass::Push) && previous_true != tr.surgeme_true) {
      const Vec3d e = entry_point(sim, tr.goal_index);
      const double in_plane = (rec.tools[0].pose.position - e).head<2>().norm();
      tr.goal_reached = in_plane <= spec.success_radius && rec.perpendicularity < spec.insertion_max_error;
    }
    previous_true = tr.surgeme_true;
    rec.control = tr;
    log.records.push_back(std::move(rec));
  }
  return log;
}

}  // namespace

SimEventLog run_reaching_log(const ExperimentSpec& spec, TeleopMode mode, std::uint64_t seed) {
  spec.validate();
  SimConfig sim = spec.sim;
  sim.seed = seed;
  std::vector<Vec3d> goals;
  for (std::size_t j = 0; j < sim.entry_offsets.size(); ++j)
    goals.push_back(entry_point(sim, static_cast<int>(j)) + Vec3d(0, 0, spec.goal_height));
  const Posed right{sim.start, Rot3d()};
  const Posed left = SuturingOperator::left_start(sim);
  World world(sim, right, left, timeline_for(spec, seed));
  ReachingOperator op(spec.profile, sim, goals, seed, right, left);
  PipelineConfig pc = spec.pipeline;
  pc.mode = mode;
  pc.fixed_surgeme = GestureClass::Push;
  Pipeline pipe(pc, sim);

  SimEventLog log = new_log(spec, mode, seed);
  int dwell = 0;
  double segment_start = 0.0;
  for (std::uint64_t tick = 0; !op.done() && tick < spec.max_ticks; ++tick) {
    const double t = world.time();
    const auto tools = world.tools();
    const OperatorFrame live = op.step(tools, tick);
    const OperatorFrame& d = world.deliver(live);
    ControlTrace tr;
    const auto cmds = pipe.step(d, tools, world.visibility(), t, tr);
    SimRecord rec = world.advance(cmds, TaskFramed{});
    tr.goal_index = static_cast<int>(op.goal_index());
    dwell = (rec.tools[0].pose.position - op.goal()).norm() <= spec.success_radius ? dwell + 1 : 0;
    tr.goal_reached = dwell >= spec.dwell_ticks;
    const double end = world.time();
    rec.control = tr;
    log.records.push_back(std::move(rec));
    if (tr.goal_reached || end - segment_start >= spec.segment_timeout - 1e-9) {
      op.next_goal();
      if (!op.done()) {
        pipe.advance_entry();
        pipe.restart_ramp(end);
      }
      segment_start = end;
      dwell = 0;
    }
  }
  return log;
}

SimEventLog run_suturing_log(const ExperimentSpec& spec, TeleopMode mode, std::uint64_t seed,
                             const ProbabilityModel& model) {
  return simulate_suturing(spec, mode, seed, model, nullptr);
}

// ---- metrics ----

Stat Stat::of(const std::vector<double>& v) {
  Stat s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

MetricsReport compute_metrics(const SimEventLog& log) {
  MetricsReport m;
  m.experiment = log.header.experiment;
  m.mode = log.header.mode;
  m.seed = log.header.seed;
  const auto& r = log.records;
  m.ticks = r.size();
  if (r.empty()) return m;
  const double dt = r.size() > 1 ? r[1].time - r[0].time : 0.0;
  const double end = r.back().time + dt;

  std::array<std::vector<double>, kGestureClassCount> runs;
  std::vector<double> perp, push_onsets;
  std::size_t correct = 0;
  std::size_t run_start = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto& c = r[i].control;
    if (c.surgeme_emitted == c.surgeme_true) ++correct;
    if (c.surgeme_true == code(GestureClass::Push)) {
      perp.push_back(r[i].perpendicularity);
      if (i == 0 || r[i - 1].control.surgeme_true != c.surgeme_true) {
        ++m.insertions;
        if (c.goal_reached) ++m.insertion_successes;
      }
    }
    if (c.surgeme_emitted == code(GestureClass::Push) &&
        (i == 0 || r[i - 1].control.surgeme_emitted != c.surgeme_emitted))
      push_onsets.push_back(r[i].time);
    if (i + 1 == r.size() || r[i + 1].control.surgeme_emitted != c.surgeme_emitted) {
      const double stop = i + 1 == r.size() ? end : r[i + 1].time;
      if (c.surgeme_emitted >= 0 && c.surgeme_emitted < kGestureClassCount)
        runs[static_cast<std::size_t>(c.surgeme_emitted)].push_back(stop - r[run_start].time);
      run_start = i + 1;
    }
  }
  for (std::size_t k = 0; k < runs.size(); ++k) m.surgeme_durations[k] = Stat::of(runs[k]);
  m.push_perpendicularity = Stat::of(perp);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(r.size());

  if (m.experiment == "reach") {
    std::size_t seg = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i + 1 == r.size() || r[i + 1].control.goal_index != r[i].control.goal_index) {
        const double stop = i + 1 == r.size() ? end : r[i + 1].time;
        bool reached = false;
        for (std::size_t k = seg; k <= i; ++k) reached = reached || r[k].control.goal_reached;
        m.entry_times.push_back(stop - r[seg].time);
        m.entry_success.push_back(reached);
        seg = i + 1;
      }
    }
    for (double x : m.entry_times) m.total_time += x;
  } else {
    for (std::size_t k = 0; k < push_onsets.size(); ++k) {
      m.entry_times.push_back((k + 1 < push_onsets.size() ? push_onsets[k + 1] : end) - push_onsets[k]);
      m.entry_success.push_back(true);
    }
    m.total_time = end - r.front().time;
  }
  return m;
}

SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("sign_test: unpaired samples");
  SignTest s;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) ++s.wins;
    else if (a[i] > b[i]) ++s.losses;
    else ++s.ties;
  }
  const std::size_t n = s.wins + s.losses;
  if (n == 0) return s;
  // P(X >= wins), X ~ Binomial(n, 1/2).
  double p = 0.0;
  for (std::size_t k = s.wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  s.p_value = std::min(1.0, p);
  return s;
}

std::vector<const MetricsReport*> ExperimentReport::runs_for(std::string_view mode) const {
  std::vector<const MetricsReport*> out;
  for (const auto& r : runs)
    if (r.mode == mode) out.push_back(&r);
  return out;
}

ExperimentReport summarize(const std::string& experiment, const std::string& config,
                           const std::vector<std::uint64_t>& seeds, std::vector<MetricsReport> runs) {
  ExperimentReport rep;
  rep.experiment = experiment;
  rep.config = config;
  rep.seeds = seeds;
  rep.runs = std::move(runs);
  std::vector<std::string> modes;
  for (const auto& r : rep.runs)
    if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) modes.push_back(r.mode);
  std::array<std::vector<double>, 2> totals, perps;
  for (const auto& mode : modes) {
    ModeSummary s;
    s.mode = mode;
    std::vector<double> total, perp, acc;
    std::array<std::vector<double>, kGestureClassCount> dur;
    for (const auto* r : rep.runs_for(mode)) {
      total.push_back(r->total_time);
      perp.push_back(r->push_perpendicularity.mean);
      acc.push_back(r->accuracy);
      for (std::size_t k = 0; k < dur.size(); ++k)
        if (r->surgeme_durations[k].n) dur[k].push_back(r->surgeme_durations[k].mean);
    }
    s.total_time = Stat::of(total);
    s.push_perpendicularity = Stat::of(perp);
    s.accuracy = Stat::of(acc);
    for (std::size_t k = 0; k < dur.size(); ++k) s.surgeme_durations[k] = Stat::of(dur[k]);
    rep.summary.push_back(s);
    if (mode == to_string(TeleopMode::Ciac)) totals[0] = total, perps[0] = perp;
    if (mode == to_string(TeleopMode::Traditional)) totals[1] = total, perps[1] = perp;
  }
  if (!totals[0].empty() && totals[0].size() == totals[1].size()) {
    rep.time_test = sign_test(totals[0], totals[1]);
    rep.perpendicularity_test = sign_test(perps[0], perps[1]);
  }
  return rep;
}

ExperimentReport run_target_reaching(const ExperimentSpec& spec, std::vector<SimEventLog>* logs) {
  spec.validate();
  std::vector<MetricsReport> runs;
  for (auto seed : spec.seeds)
    for (auto mode : spec.modes) {
      SimEventLog log = run_reaching_log(spec, mode, seed);
      runs.push_back(compute_metrics(log));
      if (logs) logs->push_back(std::move(log));
    }
  return summarize("reach", spec.describe(), spec.seeds, std::move(runs));
}

ExperimentReport run_suturing(const ExperimentSpec& spec, const ProbabilityModel& model,
                              std::vector<SimEventLog>* logs) {
  spec.validate();
  std::vector<MetricsReport> runs;
  for (auto seed : spec.seeds)
    for (auto mode : spec.modes) {
      SimEventLog log = run_suturing_log(spec, mode, seed, model);
      runs.push_back(compute_metrics(log));
      if (logs) logs->push_back(std::move(log));
    }
  return summarize("suture", spec.describe(), spec.seeds, std::move(runs));
}

// ---- reports ----

ReportFormat parse_report_format(std::string_view s) {
  if (s == "table") return ReportFormat::Table;
  if (s == "json") return ReportFormat::Json;
  if (s == "csv") return ReportFormat::Csv;
  throw ConfigError("unknown report format: " + std::string(s));
}

namespace {

json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

Stat stat_from(const json& j) {
  Stat s;
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.n = j.at("n").get<std::size_t>();
  return s;
}

json metrics_json(const MetricsReport& m) {
  json dur = json::object();
  for (GestureClass g : kAllGestureClasses) dur[std::string(gesture_name(g))] = stat_json(m.surgeme_durations[static_cast<std::size_t>(code(g))]);
  return {{"experiment", m.experiment},
          {"mode", m.mode},
          {"seed", m.seed},
          {"ticks", m.ticks},
          {"entry_times", m.entry_times},
          {"entry_success", m.entry_success},
          {"total_time", m.total_time},
          {"surgeme_durations", dur},
          {"push_perpendicularity", stat_json(m.push_perpendicularity)},
          {"accuracy", m.accuracy},
          {"insertions", m.insertions},
          {"insertion_successes", m.insertion_successes}};
}

json sign_json(const SignTest& s) {
  return {{"wins", s.wins}, {"losses", s.losses}, {"ties", s.ties}, {"p_value", s.p_value}, {"significant", s.significant()}};
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string pm(const Stat& s, int prec = 2) { return fmt(s.mean, prec) + " +/- " + fmt(s.std, prec); }

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string metrics_to_json(const MetricsReport& m) { return metrics_json(m).dump(); }

MetricsReport metrics_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    MetricsReport m;
    m.experiment = j.at("experiment").get<std::string>();
    m.mode = j.at("mode").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.ticks = j.at("ticks").get<std::size_t>();
    m.entry_times = j.at("entry_times").get<std::vector<double>>();
    m.entry_success = j.at("entry_success").get<std::vector<bool>>();
    m.total_time = j.at("total_time").get<double>();
    for (GestureClass g : kAllGestureClasses)
      m.surgeme_durations[static_cast<std::size_t>(code(g))] = stat_from(j.at("surgeme_durations").at(std::string(gesture_name(g))));
    m.push_perpendicularity = stat_from(j.at("push_perpendicularity"));
    m.accuracy = j.at("accuracy").get<double>();
    m.insertions = j.at("insertions").get<std::size_t>();
    m.insertion_successes = j.at("insertion_successes").get<std::size_t>();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad metrics report: ") + e.what(), 0);
  }
}

std::string emit_report(const ExperimentReport& r, ReportFormat format) {
  std::ostringstream os;
  switch (format) {
    case ReportFormat::Json: {
      json runs = json::array();
      for (const auto& m : r.runs) runs.push_back(metrics_json(m));
      json summary = json::array();
      for (const auto& s : r.summary) {
        json dur = json::object();
        for (GestureClass g : kAllGestureClasses)
          dur[std::string(gesture_name(g))] = stat_json(s.surgeme_durations[static_cast<std::size_t>(code(g))]);
        summary.push_back({{"mode", s.mode},
                           {"total_time", stat_json(s.total_time)},
                           {"push_perpendicularity", stat_json(s.push_perpendicularity)},
                           {"accuracy", stat_json(s.accuracy)},
                           {"surgeme_durations", dur}});
      }
      const json j = {{"experiment", r.experiment},
                      {"config", r.config},
                      {"seeds", r.seeds},
                      {"runs", runs},
                      {"summary", summary},
                      {"time_test", sign_json(r.time_test)},
                      {"perpendicularity_test", sign_json(r.perpendicularity_test)}};
      os << j.dump(2) << '\n';
      break;
    }
    case ReportFormat::Csv: {
      os << "experiment,mode,seed,ticks,total_time,entry_times,entry_success,accuracy,push_perp_mean,push_perp_std,"
            "push_perp_n,insertions,insertion_successes";
      for (GestureClass g : kAllGestureClasses) os << ",dur_" << gesture_name(g) << "_mean,dur_" << gesture_name(g) << "_n";
      os << '\n';
      for (const auto& m : r.runs) {
        os << m.experiment << ',' << m.mode << ',' << m.seed << ',' << m.ticks << ',' << num(m.total_time) << ',';
        for (std::size_t i = 0; i < m.entry_times.size(); ++i) os << (i ? ";" : "") << num(m.entry_times[i]);
        os << ',';
        for (std::size_t i = 0; i < m.entry_success.size(); ++i) os << (i ? ";" : "") << (m.entry_success[i] ? 1 : 0);
        os << ',' << num(m.accuracy) << ',' << num(m.push_perpendicularity.mean) << ','
           << num(m.push_perpendicularity.std) << ',' << m.push_perpendicularity.n << ',' << m.insertions << ','
           << m.insertion_successes;
        for (const auto& d : m.surgeme_durations) os << ',' << num(d.mean) << ',' << d.n;
        os << '\n';
      }
      break;
    }
    case ReportFormat::Table: {
      os << "experiment: " << r.experiment << "  seeds: " << r.seeds.size() << '\n';
      os << std::left << std::setw(13) << "mode" << std::setw(22) << "total time (s)" << std::setw(22)
         << "push perp (deg)" << std::setw(18) << "accuracy" << '\n';
      for (const auto& s : r.summary)
        os << std::left << std::setw(13) << s.mode << std::setw(22) << pm(s.total_time) << std::setw(22)
           << pm(s.push_perpendicularity) << std::setw(18) << pm(s.accuracy, 3) << '\n';
      os << "surgeme durations (s, emitted runs):\n";
      for (const auto& s : r.summary) {
        os << "  " << std::left << std::setw(13) << s.mode;
        for (GestureClass g : kAllGestureClasses)
          os << gesture_name(g) << ' ' << pm(s.surgeme_durations[static_cast<std::size_t>(code(g))]) << "  ";
        os << '\n';
      }
      auto line = [&](const char* name, const SignTest& t) {
        os << name << ": C-IAC lower in " << t.wins << ", higher in " << t.losses << ", ties " << t.ties
           << ", p = " << fmt(t.p_value, 6) << '\n';
      };
      line("sign test total time", r.time_test);
      line("sign test push perpendicularity", r.perpendicularity_test);
      break;
    }
  }
  return os.str();
}

// ---- datasets ----

std::vector<std::vector<RecordingRow>> gen_dataset(const OperatorProfile& profile, const SimConfig& sim,
                                                   int recordings, int throws, std::uint64_t seed) {
  if (recordings < 1) throw ConfigError("gen_dataset: recordings must be >= 1");
  if (throws < 1) throw ConfigError("gen_dataset: throws must be >= 1");
  ExperimentSpec spec = ExperimentSpec::suture_defaults();
  spec.sim = sim;
  spec.profile = profile;
  spec.throws = throws;
  std::vector<std::vector<RecordingRow>> out;
  for (int i = 0; i < recordings; ++i) {
    std::vector<RecordingRow> rows;
    simulate_suturing(spec, TeleopMode::Traditional, seed + static_cast<std::uint64_t>(i), {}, &rows);
    out.push_back(std::move(rows));
  }
  return out;
}

std::vector<LabeledRecording> label_dataset(const std::vector<std::vector<RecordingRow>>& rows, int strategy) {
  const auto s = LabelStrategy::strategy(strategy);
  std::vector<LabeledRecording> out;
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(apply_strategy(rows[i], s, static_cast<int>(i)));
  return out;
}

std::vector<std::pair<RawGestureLabel, std::size_t>> label_runs(const std::vector<RecordingRow>& rows) {
  std::vector<std::pair<RawGestureLabel, std::size_t>> runs;
  for (const auto& r : rows) {
    if (runs.empty() || runs.back().first != r.label) runs.emplace_back(r.label, 0);
    ++runs.back().second;
  }
  return runs;
}

ConfusionMatrix evaluate_model(const GestureClassifier& model, const std::vector<std::vector<RecordingRow>>& rows,
                               int strategy) {
  ConfusionMatrix cm;
  const auto pm = model.as_model();
  for (const auto& rec : label_dataset(rows, strategy)) cm += evaluate_windows(extract_windows(rec, 1), pm);
  return cm;
}

}  // namespace ciac
