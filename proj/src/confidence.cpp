#include "ciac/confidence.hpp"

#include <algorithm>
#include <cmath>

#include "ciac/errors.hpp"

namespace ciac {

Performance classify_performance(const VisibilitySample& v) {
  return (v.kd_visible || v.ch_visible) ? Performance::Present : Performance::Absent;
}

void ConfidenceParams::validate() const {
  if (!(alpha0 > 0.0) || !(beta0 > 0.0)) throw ConfigError("confidence: prior must be positive");
  if (!(w0 > 0.0) || !(w1 > 0.0)) throw ConfigError("confidence: gains must be positive");
  if (window_n == 0) throw ConfigError("confidence: window_n must be positive");
  if (!(lambda_cap >= 0.0 && lambda_cap <= 1.0)) throw ConfigError("confidence: lambda_cap must be in [0,1]");
  if (!std::isfinite(scale) || !std::isfinite(offset)) throw ConfigError("confidence: non-finite scaling");
}

double lambda_of(const ConfidenceState& s) {
  const double scaled = s.params.scale * s.posterior_mean() + s.params.offset;
  return std::clamp(scaled, 0.0, s.params.lambda_cap);
}

ConfidenceState ConfidenceState::initial(const ConfidenceParams& params) {
  params.validate();
  ConfidenceState s;
  s.alpha = params.alpha0;
  s.beta = params.beta0;
  s.params = params;
  s.lambda = lambda_of(s);
  return s;
}

ConfidenceState update(ConfidenceState s, Performance p) {
  if (p == Performance::Present)
    s.alpha += s.params.w1;
  else
    s.beta += s.params.w0;
  s.lambda = lambda_of(s);
  return s;
}

ConfidenceState decay_window(ConfidenceState s, Performance p_old) {
  if (p_old == Performance::Present)
    s.alpha = std::max(s.alpha - s.params.w1, s.params.alpha0);
  else
    s.beta = std::max(s.beta - s.params.w0, s.params.beta0);
  s.lambda = lambda_of(s);
  return s;
}

WindowedConfidence::WindowedConfidence(const ConfidenceParams& params)
    : state_(ConfidenceState::initial(params)) {}

double WindowedConfidence::push(Performance p) {
  history_.push_back(p);
  state_ = update(state_, p);
  if (history_.size() > state_.params.window_n) {
    state_ = decay_window(state_, history_.front());
    history_.pop_front();
  }
  return state_.lambda;
}

void WindowedConfidence::reset() {
  state_ = ConfidenceState::initial(state_.params);
  history_.clear();
}

}  // namespace ciac
