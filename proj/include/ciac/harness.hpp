#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ciac/gesture_model.hpp"
#include "ciac/pipeline.hpp"
#include "ciac/scripted_operator.hpp"
#include "ciac/sim_world.hpp"

namespace ciac {

enum class Experiment : int { Reach = 0, Suture = 1 };
std::string_view to_string(Experiment e);

struct ExperimentSpec {
  Experiment experiment = Experiment::Reach;
  std::vector<TeleopMode> modes = {TeleopMode::Traditional, TeleopMode::Ciac};
  PipelineConfig pipeline;  // lambda source, intent source and C-IAC tuning
  SimConfig sim;
  OperatorProfile profile;
  std::vector<std::uint64_t> seeds;
  int throws = 4;
  double goal_height = 0.010;     // m above the entry line
  double success_radius = 0.0015; // m
  int dwell_ticks = 3;
  double segment_timeout = 30.0;  // s
  double insertion_max_error = 10.0;  // deg
  std::size_t max_ticks = 20000;

  static ExperimentSpec reach_defaults();
  static ExperimentSpec suture_defaults();
  std::size_t repetitions() const { return seeds.size(); }
  void validate() const;
  // key=value text, sorted, one per line.
  std::string describe() const;
};

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t count);

// Single runs. Paired comparisons use the same seed in both modes.
SimEventLog run_reaching_log(const ExperimentSpec& spec, TeleopMode mode, std::uint64_t seed);
SimEventLog run_suturing_log(const ExperimentSpec& spec, TeleopMode mode, std::uint64_t seed,
                             const ProbabilityModel& model);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  std::size_t n = 0;

  static Stat of(const std::vector<double>& v);
  bool operator==(const Stat&) const = default;
};

// Everything here is a function of the SimEventLog alone.
struct MetricsReport {
  std::string experiment;
  std::string mode;
  std::uint64_t seed = 0;
  std::size_t ticks = 0;
  std::vector<double> entry_times;  // reaching: per goal; suturing: per throw from emitted Push onsets
  std::vector<bool> entry_success;
  double total_time = 0.0;
  std::array<Stat, kGestureClassCount> surgeme_durations{};  // emitted-class runs
  Stat push_perpendicularity;  // PSM1, degrees, over true Push ticks
  double accuracy = 0.0;       // frame-wise emitted vs true surgeme
  std::size_t insertions = 0;
  std::size_t insertion_successes = 0;

  bool operator==(const MetricsReport&) const = default;
};

MetricsReport compute_metrics(const SimEventLog& log);

struct SignTest {
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t ties = 0;
  double p_value = 1.0;  // one-sided exact binomial, ties dropped

  bool significant(double alpha = 0.05) const { return p_value < alpha; }
};

// Paired sign test counting pairs where a[i] < b[i] as wins.
SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b);

struct ModeSummary {
  std::string mode;
  Stat total_time;
  Stat push_perpendicularity;  // mean over runs of the per-run mean
  Stat accuracy;
  std::array<Stat, kGestureClassCount> surgeme_durations{};
};

struct ExperimentReport {
  std::string experiment;
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> runs;  // ordered by seed, then mode
  std::vector<ModeSummary> summary;
  SignTest time_test;           // C-IAC total time below traditional
  SignTest perpendicularity_test;  // C-IAC Push perpendicularity below traditional

  std::vector<const MetricsReport*> runs_for(std::string_view mode) const;
};

ExperimentReport summarize(const std::string& experiment, const std::string& config,
                           const std::vector<std::uint64_t>& seeds, std::vector<MetricsReport> runs);

ExperimentReport run_target_reaching(const ExperimentSpec& spec,
                                     std::vector<SimEventLog>* logs = nullptr);
ExperimentReport run_suturing(const ExperimentSpec& spec, const ProbabilityModel& model,
                              std::vector<SimEventLog>* logs = nullptr);

enum class ReportFormat { Table, Json, Csv };
ReportFormat parse_report_format(std::string_view s);
std::string metrics_to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const std::string& text);
std::string emit_report(const ExperimentReport& r, ReportFormat format);

// ---- datasets ----

// Scripted suturing recordings under traditional teleoperation; labels are the operator's gestures.
std::vector<std::vector<RecordingRow>> gen_dataset(const OperatorProfile& profile, const SimConfig& sim,
                                                   int recordings, int throws, std::uint64_t seed);
std::vector<LabeledRecording> label_dataset(const std::vector<std::vector<RecordingRow>>& rows, int strategy);

// Run-length encoding of a label column.
std::vector<std::pair<RawGestureLabel, std::size_t>> label_runs(const std::vector<RecordingRow>& rows);

// Frame-wise confusion over every full window of each recording.
ConfusionMatrix evaluate_model(const GestureClassifier& model, const std::vector<std::vector<RecordingRow>>& rows,
                               int strategy);

}  // namespace ciac
