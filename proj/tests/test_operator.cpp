#include <doctest.h>

#include <cmath>
#include <vector>

#include "ciac/harness.hpp"
#include "ciac/scripted_operator.hpp"

using namespace ciac;

namespace {

std::array<ManipulatorState, 2> tools_at(const Posed& a, const Posed& b) {
  std::array<ManipulatorState, 2> t;
  t[0].pose = a;
  t[1].pose = b;
  return t;
}

// Operator driven open loop with the tools pinned to the hands.
std::vector<OperatorFrame> suture_frames(const OperatorProfile& p, std::uint64_t seed, int throws = 1) {
  const SimConfig sim;
  SuturingOperator op(p, sim, throws, seed);
  auto tools = tools_at(SuturingOperator::right_start(sim), SuturingOperator::left_start(sim));
  std::vector<OperatorFrame> out;
  for (std::uint64_t k = 0; !op.done() && k < 20000; ++k) {
    out.push_back(op.step(tools, k));
    tools[0].pose = out.back().right.pose;
    tools[1].pose = out.back().left.pose;
  }
  return out;
}

bool same(const HandFrame& a, const HandFrame& b) {
  return a.pose.position == b.pose.position && a.pose.orientation.matrix() == b.pose.orientation.matrix() &&
         a.velocity == b.velocity && a.angular_velocity == b.angular_velocity && a.gripper == b.gripper &&
         a.force == b.force && a.true_target == b.true_target;
}

}  // namespace

TEST_CASE("Fitts duration") {
  const OperatorProfile p;
  CHECK(fitts_duration(p, 0.0) == doctest::Approx(0.3));
  CHECK(fitts_duration(p, 0.0015) == doctest::Approx(0.45));
  CHECK(fitts_duration(p, 0.0105) == doctest::Approx(0.75));
}

TEST_CASE("profiles validate") {
  CHECK_NOTHROW(OperatorProfile::novice().validate());
  CHECK_NOTHROW(OperatorProfile::expert().validate());
  CHECK_NOTHROW(OperatorProfile::noiseless().validate());
  OperatorProfile p;
  p.fitts_width = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.tremor_sigma = -1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.pace = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("observer lags by the reaction latency") {
  ToolObserver obs(0.15, 0.05);
  for (int k = 0; k < 10; ++k) {
    std::array<ManipulatorState, 2> t;
    t[0].pose.position = Vec3d(0.001 * k, 0, 0);
    obs.push(t);
    CHECK(obs.observed().pose.position.x() == doctest::Approx(0.001 * std::max(0, k - 3)));
    if (k >= 4) CHECK(obs.observed_speed() == doctest::Approx(0.02));
  }
}

TEST_CASE("suturing script order") {
  const std::vector<std::pair<int, RawGestureLabel>> expected = {
      {0, 1}, {0, 5}, {0, 2}, {0, 3}, {0, 6}, {0, 10}, {0, 4}, {0, 8},
      {1, 2}, {1, 3}, {1, 6}, {1, 10}, {1, 4}, {1, 8},
      {2, 2}, {2, 3}, {2, 6}, {2, 4}, {2, 8},
      {3, 2}, {3, 3}, {3, 6}, {3, 4}, {3, 8}, {3, 11}};
  CHECK(suturing_script(4) == expected);
  const std::vector<std::pair<int, RawGestureLabel>> one = {{0, 1}, {0, 5}, {0, 2}, {0, 3}, {0, 6},
                                                            {0, 10}, {0, 4}, {0, 8}, {0, 11}};
  CHECK(suturing_script(1) == one);
  CHECK_THROWS_AS(suturing_script(0), ConfigError);
}

TEST_CASE("gestures are performed in script order") {
  const auto frames = suture_frames(OperatorProfile::novice(), 3, 2);
  std::vector<RawGestureLabel> runs;
  for (const auto& f : frames)
    if (runs.empty() || runs.back() != f.gesture) runs.push_back(f.gesture);
  std::vector<RawGestureLabel> script;
  for (const auto& [k, g] : suturing_script(2)) script.push_back(g);
  CHECK(runs == script);
}

TEST_CASE("hand trajectories are C1 continuous") {
  const double dt = SimConfig{}.tick;
  for (std::uint64_t seed : {1u, 2u}) {
    const auto f = suture_frames(OperatorProfile::novice(), seed, 2);
    REQUIRE(f.size() > 100);
    double max_dv = 0.0, max_dw = 0.0, max_pos = 0.0;
    for (std::size_t k = 0; k + 1 < f.size(); ++k) {
      const HandFrame* a[2] = {&f[k].right, &f[k].left};
      const HandFrame* b[2] = {&f[k + 1].right, &f[k + 1].left};
      for (int i = 0; i < 2; ++i) {
        max_dv = std::max(max_dv, (b[i]->velocity - a[i]->velocity).norm());
        max_dw = std::max(max_dw, (b[i]->angular_velocity - a[i]->angular_velocity).norm());
        // Trapezoid rule: a velocity jump would leave a residual of order dv*dt.
        const Vec3d step = b[i]->pose.position - a[i]->pose.position;
        max_pos = std::max(max_pos, (step - 0.5 * dt * (a[i]->velocity + b[i]->velocity)).norm());
      }
    }
    CHECK(max_dv < 0.02);   // m/s per tick
    CHECK(max_dw < 0.5);    // rad/s per tick
    CHECK(max_pos < 2e-5);  // m
  }
}

TEST_CASE("operator streams are deterministic per seed") {
  const auto a = suture_frames(OperatorProfile::novice(), 7);
  const auto b = suture_frames(OperatorProfile::novice(), 7);
  const auto c = suture_frames(OperatorProfile::novice(), 8);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(same(a[k].right, b[k].right));
    CHECK(same(a[k].left, b[k].left));
    CHECK(a[k].pedal == b[k].pedal);
    CHECK(a[k].gesture == b[k].gesture);
  }
  bool differs = a.size() != c.size();
  for (std::size_t k = 0; !differs && k < a.size(); ++k) differs = !same(a[k].right, c[k].right);
  CHECK(differs);
}

TEST_CASE("orientation error statistics") {
  const SimConfig sim;
  double sum = 0.0;
  const int n = 400;
  for (int s = 0; s < n; ++s) {
    SuturingOperator op(OperatorProfile::novice(), sim, 1, static_cast<std::uint64_t>(s + 1));
    sum += op.orientation_error(0) * kDegPerRad;
  }
  CHECK(sum / n == doctest::Approx(25.0).epsilon(0.03));
  SuturingOperator quiet(OperatorProfile::noiseless(), sim, 4, 1);
  for (int k = 0; k < 4; ++k) CHECK(quiet.orientation_error(k) == 0.0);
}

TEST_CASE("pedal only during needle positioning and push when the tool is tilted") {
  int pressed = 0;
  for (const auto& f : suture_frames(OperatorProfile::novice(), 4, 2)) {
    if (f.pedal) {
      ++pressed;
      CHECK((f.gesture == kG2 || f.gesture == kG3));
    }
  }
  CHECK(pressed > 0);
  for (const auto& f : suture_frames(OperatorProfile::noiseless(), 4, 2)) CHECK_FALSE(f.pedal);
}

TEST_CASE("force is the impedance law around the true target") {
  const OperatorProfile p = OperatorProfile::noiseless();
  const Impedanced imp = Impedanced::defaults();
  for (const auto& f : suture_frames(p, 2)) {
    const Vec3d expect = synthesize_operator_force(f.right.true_target, f.right.pose.position, f.right.velocity, imp);
    CHECK((f.right.force - expect).norm() < 1e-12);
  }
}

TEST_CASE("noiseless reaching needs one submovement per goal") {
  const SimConfig sim;
  const Posed right{sim.start, Rot3d()};
  const Posed left = SuturingOperator::left_start(sim);
  std::vector<Vec3d> goals = {Vec3d(0.015, 0, 0.01), Vec3d(0.03, 0, 0.01)};
  ReachingOperator op(OperatorProfile::noiseless(), sim, goals, 1, right, left);
  auto tools = tools_at(right, left);
  std::uint64_t k = 0;
  for (std::size_t g = 0; g < goals.size(); ++g) {
    OperatorFrame f;
    for (int i = 0; i < 60; ++i, ++k) {
      f = op.step(tools, k);
      tools[0].pose = f.right.pose;
    }
    CHECK((f.right.pose.position - goals[g]).norm() < 1e-12);
    CHECK(f.right.velocity.norm() < 1e-12);
    CHECK(op.submovements() == g + 1);
    op.next_goal();
  }
  CHECK(op.done());
}
