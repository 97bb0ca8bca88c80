#include <doctest.h>

#include <random>

#include "ciac/shared_controller.hpp"
#include "test_util.hpp"

using namespace ciac;

namespace {

EntryPointSet entries() {
  return EntryPointSet({Vec3d(0.015, 0, 0), Vec3d(0.030, 0, 0), Vec3d(0.045, 0, 0), Vec3d(0.060, 0, 0)});
}

ControlInput input(GestureClass g, const Vec3d& human, double lambda, double t = 0.0) {
  ControlInput in;
  in.surgeme = g;
  in.intent.tau_h_hat = human;
  in.intent.timestamp = t;
  in.lambda = lambda;
  in.timestamp = t;
  return in;
}

ControllerConfig unlimited() {
  ControllerConfig c;
  c.rate_limit = 1e9;
  return c;
}

}  // namespace

TEST_CASE("blend stays within componentwise bounds") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100000; ++i) {
    const Vec3d r = test::random_vec(rng, 1.0), h = test::random_vec(rng, 1.0);
    const Vec3d l(u(rng), u(rng), u(rng));
    const Vec3d t = blend(r, h, l);
    for (int k = 0; k < 3; ++k) {
      CHECK_LE(t[k], std::max(r[k], h[k]));
      CHECK_GE(t[k], std::min(r[k], h[k]));
    }
  }
  const Vec3d r(1, 2, 3), h(-4, 5, 0.5);
  CHECK(blend(r, h, Vec3d::Zero().eval()) == h);
  CHECK(blend(r, h, Vec3d::Ones().eval()) == r);
  CHECK(blend(r, h, Vec3d(2, -1, 0.5)) == Vec3d(1, 5, 1.75));
  CHECK_FALSE(lambda_in_range(Vec3d(2, 0, 0)));
  CHECK(lambda_in_range(Vec3d(1, 0, 0.5)));
}

TEST_CASE("paradigm table") {
  const auto e = entries();
  const auto pos = paradigm_for(GestureClass::Positioning, e, 0.01);
  CHECK(pos.mask(0.5) == Vec3d(0, 0, 0.5));
  CHECK(pos.axes[2].target == TargetRule::Fixed);

  const auto push = paradigm_for(GestureClass::Push, e, 0.01);
  CHECK(push.mask(0.5) == Vec3d(0.5, 0, 0));
  CHECK(push.axes[0].value == 0.015);

  const auto pull = paradigm_for(GestureClass::Pull, e, 0.01);
  CHECK(pull.mask(0.5) == Vec3d(0.5, 0.5, 0.5));
  CHECK(pull.axes[0].value == 0.030);
  CHECK(pull.axes[1].target == TargetRule::Hold);

  const auto hand = paradigm_for(GestureClass::Handoff, e, 0.01);
  CHECK(hand.mask(0.5) == Vec3d(0.5, 0, 0.5));

  CHECK(paradigm_for(GestureClass::Other, e, 0.01).mask(0.9) == Vec3d::Zero());
}

TEST_CASE("worked control ticks") {
  const Vec3d human(0.020, 0.005, 0.020);
  {
    SharedController c(unlimited(), entries());
    CHECK(c.control_tick(input(GestureClass::Other, human, 0.8)).tau == human);
  }
  {
    SharedController c(unlimited(), entries());
    const auto cmd = c.control_tick(input(GestureClass::Push, human, 1.0));
    CHECK(cmd.tau.x() == 0.015);
    CHECK(cmd.tau.y() == human.y());
    CHECK(cmd.tau.z() == human.z());
  }
  {
    SharedController c(unlimited(), entries());
    const auto cmd = c.control_tick(input(GestureClass::Positioning, human, 0.5));
    CHECK(cmd.tau.z() == doctest::Approx(0.015));
    CHECK(cmd.tau.x() == human.x());
  }
}

TEST_CASE("zero-mask axes follow the estimated intent for any lambda") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (GestureClass g : kAllGestureClasses) {
    SharedController c(unlimited(), entries());
    for (int i = 0; i < 200; ++i) {
      const Vec3d h = test::random_vec(rng, 0.05);
      const double l = u(rng);
      const auto cmd = c.control_tick(input(g, h, l, i * 0.05));
      const Vec3d m = paradigm_for(g, c.entries(), 0.01).mask(1.0);
      for (int k = 0; k < 3; ++k)
        if (m[k] == 0.0) CHECK(cmd.tau[k] == h[k]);
    }
  }
}

TEST_CASE("pull holds y and z at the onset pose") {
  SharedController c(unlimited(), entries());
  ControlInput in = input(GestureClass::Pull, Vec3d(0.02, 0.03, 0.04), 1.0);
  in.tool.position = Vec3d(0.01, 0.002, 0.003);
  c.control_tick(in);
  in.tool.position = Vec3d(0.02, 0.02, 0.02);
  in.timestamp = in.intent.timestamp = 0.05;
  const auto cmd = c.control_tick(in);
  CHECK(cmd.tau == Vec3d(0.030, 0.002, 0.003));
}

TEST_CASE("rate limit caps per-axis change") {
  SharedController c(ControllerConfig{}, entries());
  c.control_tick(input(GestureClass::Other, Vec3d::Zero(), 0.0));
  const auto cmd = c.control_tick(input(GestureClass::Other, Vec3d(0.02, -0.001, 0.0), 0.0, 0.05));
  CHECK(cmd.rate_limited);
  CHECK(cmd.tau.x() == doctest::Approx(0.005));
  CHECK(cmd.tau.y() == doctest::Approx(-0.001));
  const auto next = c.control_tick(input(GestureClass::Other, Vec3d(0.006, 0, 0), 0.0, 0.10));
  CHECK_FALSE(next.rate_limited);
}

TEST_CASE("stale input repeats the previous command") {
  SharedController c(unlimited(), entries());
  const auto first = c.control_tick(input(GestureClass::Other, Vec3d(0.01, 0, 0), 0.0, 1.0));
  ControlInput late = input(GestureClass::Push, Vec3d(0.05, 0, 0), 1.0, 1.2);
  late.intent.timestamp = 1.0;
  const auto cmd = c.control_tick(late);
  CHECK(cmd.stale);
  CHECK(cmd.tau == first.tau);

  ControlInput nan_lambda = input(GestureClass::Push, Vec3d(0.05, 0, 0), std::nan(""), 1.25);
  CHECK(c.control_tick(nan_lambda).stale);
}

TEST_CASE("entry index advances after a full cycle") {
  SharedController c(unlimited(), entries());
  double t = 0.0;
  auto tick = [&](GestureClass g, double tool_x) {
    ControlInput in = input(g, Vec3d::Zero(), 0.5, t);
    in.tool.position = Vec3d(tool_x, 0, 0);
    t += 0.05;
    return c.control_tick(in);
  };
  tick(GestureClass::Push, 0.015);
  tick(GestureClass::Pull, 0.020);
  tick(GestureClass::Handoff, 0.060);  // too far from x_2
  CHECK(tick(GestureClass::Positioning, 0.03).entry_index == 0);

  tick(GestureClass::Pull, 0.020);
  tick(GestureClass::Handoff, 0.031);
  CHECK(tick(GestureClass::Handoff, 0.031).entry_index == 0);
  CHECK(tick(GestureClass::Positioning, 0.03).entry_index == 1);

  // Handoff without a preceding Pull does not count.
  tick(GestureClass::Handoff, 0.045);
  CHECK(tick(GestureClass::Positioning, 0.045).entry_index == 1);
}

TEST_CASE("last entry point clamps and flags") {
  SharedController c(unlimited(), EntryPointSet({Vec3d(0.015, 0, 0)}));
  const auto cmd = c.control_tick(input(GestureClass::Pull, Vec3d::Zero(), 1.0));
  CHECK(cmd.entry_clamped);
  CHECK(cmd.tau.x() == 0.015);
}

TEST_CASE("auto-orient gating follows pedal and surgeme") {
  SharedController c(unlimited(), entries());
  ControlInput in = input(GestureClass::Push, Vec3d::Zero(), 0.5);
  in.pedal = true;
  CHECK(c.control_tick(in).auto_orient);
  in.surgeme = GestureClass::Pull;
  CHECK_FALSE(c.control_tick(in).auto_orient);
  in.surgeme = GestureClass::Positioning;
  in.pedal = false;
  CHECK_FALSE(c.control_tick(in).auto_orient);
}

TEST_CASE("auto-orient trajectory") {
  const TaskFramed frame;
  CHECK(auto_orient(Rot3d(), frame).empty());

  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    const Rot3d start = test::random_rotation(rng);
    const auto traj = auto_orient(start, frame);
    if (perpendicularity_error(start, frame) < 1e-6) continue;
    REQUIRE_FALSE(traj.empty());
    CHECK(perpendicularity_error(traj.back(), frame) < 0.1);
    double prev = perpendicularity_error(start, frame);
    const Rot3d* last = &start;
    for (const Rot3d& r : traj) {
      const double e = perpendicularity_error(r, frame);
      CHECK(e <= prev + 1e-9);
      CHECK(r.angle_to(*last) * kDegPerRad <= 4.5 + 1e-9);
      prev = e;
      last = &r;
    }
  }
}
