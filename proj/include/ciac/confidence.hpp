#pragma once

#include <cstddef>
#include <deque>

namespace ciac {

// Marker detections for one tick: keydot on the tool, ChArUco on the phantom.
struct VisibilitySample {
  bool kd_visible = false;
  bool ch_visible = false;
  double timestamp = 0.0;
};

enum class Performance : int { Absent = 0, Present = 1 };

// p = 1 iff either marker is detected.
Performance classify_performance(const VisibilitySample& v);

struct ConfidenceParams {
  double alpha0 = 1.0;
  double beta0 = 1.0;
  double w0 = 3.0;  // gain on absent performance
  double w1 = 1.0;  // gain on present performance
  std::size_t window_n = 100;
  // Controller-facing lambda = clamp(scale * mean + offset, 0, lambda_cap).
  double scale = 1.0;
  double offset = 0.0;
  double lambda_cap = 0.8;

  void validate() const;
};

// Beta(alpha, beta) trust state over marker-tracking performance.
struct ConfidenceState {
  double alpha = 1.0;
  double beta = 1.0;
  ConfidenceParams params;
  double lambda = 0.5;  // scaled posterior mean

  static ConfidenceState initial(const ConfidenceParams& params);
  double posterior_mean() const { return alpha / (alpha + beta); }
};

ConfidenceState update(ConfidenceState state, Performance p);
// Removes the contribution of an expired sample; alpha and beta never drop below the prior.
ConfidenceState decay_window(ConfidenceState state, Performance p_old);
// Posterior mean with the configured scaling, clamped to [0, lambda_cap].
double lambda_of(const ConfidenceState& state);

// Sliding-window trust: only the last window_n performance samples count.
class WindowedConfidence {
 public:
  explicit WindowedConfidence(const ConfidenceParams& params = {});

  double push(Performance p);
  double push(const VisibilitySample& v) { return push(classify_performance(v)); }

  const ConfidenceState& state() const { return state_; }
  double lambda() const { return state_.lambda; }
  const std::deque<Performance>& history() const { return history_; }
  void reset();

 private:
  ConfidenceState state_;
  std::deque<Performance> history_;
};

}  // namespace ciac
