#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ciac/kinematics.hpp"
#include "ciac/surgeme.hpp"

namespace ciac {

inline constexpr std::size_t kWindowSteps = 60;
inline constexpr std::size_t kStreamFeatures = 28;
inline constexpr double kSampleRate = 20.0;

// Raw dataset gesture label G1..G15; 0 marks an unlabeled row.
using RawGestureLabel = int;
inline constexpr int kMaxRawLabel = 15;

// Grouping of raw gesture labels into surgeme classes.
class LabelStrategy {
 public:
  // Strategy 1 keeps only G2/G3/G6/G4; strategy 2 also folds G5, G10, G8 into them.
  static LabelStrategy strategy(int id);

  int id() const { return id_; }
  GestureClass operator()(RawGestureLabel raw) const;

 private:
  int id_ = 0;
  std::array<GestureClass, kMaxRawLabel + 1> map_{};
};

// One 20 Hz dataset row: 19 features for each of PSM1, PSM2, SIGMA_R, SIGMA_L, then the raw label.
struct RecordingRow {
  static constexpr std::size_t kFeatureColumns = 4 * KinematicSample::kFeatureCount;
  static constexpr std::size_t kColumns = kFeatureColumns + 1;

  std::array<double, kFeatureColumns> values{};
  RawGestureLabel label = 0;

  KinematicSample sample(DeviceId device, double timestamp) const;
  void set_sample(const KinematicSample& s);
};

using StreamFeatures = Eigen::Matrix<double, kStreamFeatures, 1>;
using Probabilities = Eigen::Matrix<double, kGestureClassCount, 1>;

// Linear velocity, angular velocity and gripper angle of each device in device order.
StreamFeatures stream_features(const RecordingRow& row);

const std::vector<std::string>& recording_header();

std::vector<RecordingRow> load_recording(std::istream& in);
std::vector<RecordingRow> load_recording(const std::filesystem::path& path);
void write_recording(std::ostream& out, const std::vector<RecordingRow>& rows);
void write_recording(const std::filesystem::path& path, const std::vector<RecordingRow>& rows);

struct LabeledRecording {
  std::vector<RecordingRow> rows;
  std::vector<GestureClass> labels;
  int recording_id = 0;
};

LabeledRecording apply_strategy(const std::vector<RecordingRow>& rows, const LabelStrategy& strategy,
                                int recording_id = 0);

// A window of kWindowSteps x kStreamFeatures values labeled by its final row.
struct LabeledWindow {
  Eigen::MatrixXd window;
  GestureClass label = GestureClass::Other;
  int recording_id = 0;
};

std::vector<LabeledWindow> extract_windows(const LabeledRecording& rec, std::size_t stride,
                                           std::size_t steps = kWindowSteps);

using ProbabilityModel = std::function<Probabilities(const Eigen::MatrixXd& window)>;

struct StreamConfig {
  double threshold = 0.8;
  std::size_t ema_window = 10;
  std::size_t window_steps = kWindowSteps;
  // Weight of a vector of age k is (1 - gamma)^k before normalization.
  double gamma() const { return 2.0 / (static_cast<double>(ema_window) + 1.0); }
};

// Exponentially weighted mean of buffered vectors, newest last.
Probabilities ema_average(const std::deque<Probabilities>& buffer, double gamma);

struct StreamState {
  StreamConfig config;
  std::deque<StreamFeatures> rows;
  std::deque<Probabilities> probabilities;
  GestureClass emitted = GestureClass::Other;
  Probabilities raw = Probabilities::Constant(1.0 / kGestureClassCount);
  Probabilities averaged = Probabilities::Constant(1.0 / kGestureClassCount);

  bool window_full() const { return rows.size() >= config.window_steps; }
  Eigen::MatrixXd window() const;
};

// Pushes one row; once the window is full, classifies it, smooths the probabilities
// and switches the emitted class only when the smoothed maximum reaches the threshold.
GestureClass stream_step(StreamState& state, const StreamFeatures& row, const ProbabilityModel& model);

}  // namespace ciac
