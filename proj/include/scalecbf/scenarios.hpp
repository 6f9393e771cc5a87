#pragma once

// Built-in planar scenarios and a generator of random collision scenes.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "scalecbf/errors.hpp"
#include "scalecbf/sim.hpp"

namespace scalecbf {

inline ScenarioConfig example1(bool circulation) {
  ScenarioConfig c;
  c.name = circulation ? "example1_circ" : "example1_no_circ";
  c.dim = 2;
  c.robot = ScalingPrimitive::ball(Eigen::Vector2d::Zero(), 0.5);
  c.robot_orientation = Eigen::VectorXd::Zero(1);
  c.obstacles.push_back(
      {"ellipse", Body{ScalingPrimitive::axis_ellipsoid(Eigen::Vector2d(2.0, 1.5)), Frame::planar(Eigen::Vector2d(0, -0.8))}});
  c.p0 = Eigen::Vector2d(0.0, -5.0);
  c.v0 = Eigen::Vector2d::Zero();
  c.nominal.kind = NominalKind::goal_pd;
  c.nominal.kp = 1.0;
  c.nominal.kd = 2.0;
  c.nominal.goal = Eigen::Vector2d(0.0, 5.0);
  c.gains = HocbfGains{1.03, 5.0, 5.0};
  c.circulation = circulation;
  c.circulation_matrix = (Eigen::Matrix2d() << 0, 1, -1, 0).finished();
  c.d = DFunction::linear(1.0, 1.0);
  c.horizon = 30.0;
  return c;
}

/// Unit ball robot tracking a circle that sweeps through a padded square.
inline ScenarioConfig fig1_tracking() {
  ScenarioConfig c;
  c.name = "fig1_tracking";
  c.dim = 2;
  c.robot = ScalingPrimitive::ball(Eigen::Vector2d::Zero(), 1.0);
  c.obstacles.push_back(
      {"square", Body{ScalingPrimitive::box(Eigen::Vector2d(1.0, 1.0), 10.0), Frame::planar(Eigen::Vector2d::Zero())}});
  CircleReference ref{Eigen::Vector2d(2.5, 0.0), 3.0, 20.0, 0.0};
  c.nominal.kind = NominalKind::trajectory_pd;
  c.nominal.kp = 4.0;
  c.nominal.kd = 4.0;
  c.nominal.reference = ref;
  const ReferenceSample s = sample(ref, 0.0);
  c.p0 = s.p;
  c.v0 = s.v;
  c.gains = HocbfGains{1.03, 5.0, 5.0};
  c.horizon = 20.0;
  c.goal_tol = 0.5;
  return c;
}

/// Ellipse eraser on a 1.0 x 0.6 m board wiping along a line that crosses a
/// rectangular keep-out zone. K = 5 barriers: the zone plus four board edges.
inline ScenarioConfig whiteboard2d(bool circulation = true) {
  ScenarioConfig c;
  c.name = "whiteboard2d";
  c.dim = 2;
  c.robot = ScalingPrimitive::axis_ellipsoid(Eigen::Vector2d(0.06, 0.03));
  c.obstacles.push_back({"keep_out", Body{ScalingPrimitive::box(Eigen::Vector2d(0.1, 0.075), 20.0),
                                          Frame::planar(Eigen::Vector2d(0.5, 0.3))}});
  // Board edges as outer halfspaces {a'q + b <= 1}: x <= -0.02, x >= 1.02, ...
  const std::vector<std::pair<std::string, std::pair<Eigen::Vector2d, double>>> edges = {
      {"left", {Eigen::Vector2d(1, 0), 1.02}},
      {"right", {Eigen::Vector2d(-1, 0), 2.02}},
      {"bottom", {Eigen::Vector2d(0, 1), 1.02}},
      {"top", {Eigen::Vector2d(0, -1), 1.62}}};
  for (const auto& [name, e] : edges) {
    c.obstacles.push_back({name, Body{ScalingPrimitive::halfspace(e.first, e.second), Frame::identity(2)}});
  }
  const double speed = 0.06;
  PolylineReference ref;
  ref.points = {Eigen::Vector2d(0.15, 0.3), Eigen::Vector2d(0.85, 0.3)};
  ref.times = {0.0, 0.7 / speed};
  c.nominal.kind = NominalKind::trajectory_pd;
  c.nominal.kp = 10.0;
  c.nominal.kd = 2.0 * std::sqrt(10.0);
  c.nominal.reference = ref;
  c.p0 = ref.points.front();
  c.v0 = Eigen::Vector2d::Zero();
  c.gains = HocbfGains{1.03, 10.0, 10.0};
  c.smooth_min = true;
  c.eta = 5.0;
  c.phi0 = 0.3;
  c.circulation = circulation;
  c.circulation_matrix = (Eigen::Matrix2d() << 0, -1, 1, 0).finished();
  c.d = DFunction::exponential(200.0, 5.0, 0.07, 1500.0, 0.75);
  c.velocity_limits = VelocityLimits{Eigen::Vector2d::Constant(-0.2), Eigen::Vector2d::Constant(0.2), 40.0, 40.0};
  c.horizon = 30.0;
  c.goal_tol = 0.02;
  return c;
}

inline const std::vector<std::string>& builtin_scenario_names() {
  static const std::vector<std::string> names = {"example1_no_circ", "example1_circ", "fig1_tracking", "whiteboard2d"};
  return names;
}

inline ScenarioConfig builtin_scenario(const std::string& name) {
  if (name == "example1_no_circ") return example1(false);
  if (name == "example1_circ") return example1(true);
  if (name == "fig1_tracking") return fig1_tracking();
  if (name == "whiteboard2d") return whiteboard2d(true);
  throw ConfigError("unknown scenario '" + name + "'");
}

// ---------------------------------------------------------------------------
// Random collision scenes

namespace detail {

// Portable uniform draws; std distributions differ between libraries.
struct SceneRng {
  explicit SceneRng(std::uint64_t seed) : eng(seed) {}
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(eng() >> 11) * 0x1.0p-53;
  }
  std::mt19937_64 eng;
};

}  // namespace detail

/// Ball or ellipse robot at rest below one to three disjoint obstacles
/// (ellipses and smoothed polygons), driven by a goal PD controller to a
/// random goal beyond them. Every barrier starts positive, so psi_0 and
/// psi_1 are nonnegative at t = 0.
inline ScenarioConfig random_collision_scenario(std::uint64_t seed) {
  detail::SceneRng rng(seed);
  ScenarioConfig c;
  c.name = "random_" + std::to_string(seed);
  c.seed = seed;
  c.dim = 2;
  const double ra = rng.uniform(0.3, 0.6), rb = rng.uniform(0.2, ra);
  c.robot = ScalingPrimitive::axis_ellipsoid(Eigen::Vector2d(ra, rb));
  c.robot_orientation = Eigen::VectorXd::Constant(1, rng.uniform(0.0, std::numbers::pi));
  c.p0 = Eigen::Vector2d(rng.uniform(-1.0, 1.0), -7.0);
  c.v0 = Eigen::Vector2d::Zero();
  c.nominal.kind = NominalKind::goal_pd;
  c.nominal.kp = 1.0;
  c.nominal.kd = 2.0;
  c.nominal.goal = Eigen::Vector2d(rng.uniform(-1.0, 1.0), 7.0);
  c.gains = HocbfGains{1.03, 5.0, 5.0};
  c.horizon = 20.0;

  // Obstacles near the straight path on rows y = -3, 0, 3. Each fits in a
  // disc of radius 1.2 (smoothing included), so they stay disjoint.
  const int count = 1 + static_cast<int>(rng.uniform(0.0, 3.0));
  for (int k = 0; k < count; ++k) {
    const double y = -3.0 + 3.0 * k, s = (y - c.p0(1)) / (c.nominal.goal(1) - c.p0(1));
    const Eigen::Vector2d center(c.p0(0) + s * (c.nominal.goal(0) - c.p0(0)) + rng.uniform(-0.3, 0.3), y);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    if (rng.uniform(0.0, 1.0) < 0.5) {
      const Eigen::Vector2d axes(rng.uniform(0.4, 1.0), rng.uniform(0.3, 0.8));
      c.obstacles.push_back({"ellipse_" + std::to_string(k),
                             Body{ScalingPrimitive::axis_ellipsoid(axes), Frame::planar(center, angle)}});
    } else {
      const int sides = 4 + static_cast<int>(rng.uniform(0.0, 3.0));
      const double r = rng.uniform(0.4, 0.6);
      Eigen::MatrixXd A(sides, 2);
      Eigen::VectorXd b(sides);
      for (int i = 0; i < sides; ++i) {
        const double t = 2.0 * std::numbers::pi * i / sides;
        A.row(i) << std::cos(t), std::sin(t);
        b(i) = -r;
      }
      c.obstacles.push_back({"polygon_" + std::to_string(k),
                             Body{ScalingPrimitive::polytope(A, b, rng.uniform(5.0, 15.0)), Frame::planar(center, angle)}});
    }
  }
  return c;
}

}  // namespace scalecbf
