#pragma once

// Closed-loop rollouts of a translating rigid body (double integrator in
// 2D or 3D) among static convex obstacles, filtered by a (C)HOCBF-QP.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "scalecbf/errors.hpp"
#include "scalecbf/safety.hpp"
#include "scalecbf/sensitivity.hpp"

namespace scalecbf {

struct PlantState {
  double t = 0.0;
  Eigen::VectorXd cfg;
  Eigen::VectorXd vel;
};

/// Classical RK4 for x_dot = f(t, x).
template <class F>
Eigen::VectorXd rk4(const F& f, double t, const Eigen::VectorXd& x, double dt) {
  const Eigen::VectorXd k1 = f(t, x);
  const Eigen::VectorXd k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1);
  const Eigen::VectorXd k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2);
  const Eigen::VectorXd k4 = f(t + dt, x + dt * k3);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// ---------------------------------------------------------------------------
// References and nominal control

struct CircleReference {
  Eigen::VectorXd center;  // 2D
  double radius = 1.0;
  double period = 10.0;
  double phase = 0.0;
};

/// Straight segments between waypoints reached at the given times; holds
/// the last waypoint afterwards.
struct PolylineReference {
  std::vector<Eigen::VectorXd> points;
  std::vector<double> times;
};

using Reference = std::variant<CircleReference, PolylineReference>;

struct ReferenceSample {
  Eigen::VectorXd p, v, a;
};

inline ReferenceSample sample(const Reference& ref, double t) {
  if (const auto* c = std::get_if<CircleReference>(&ref)) {
    const double w = 2.0 * std::numbers::pi / c->period, s = w * t + c->phase;
    const Eigen::Vector2d u(std::cos(s), std::sin(s)), du(-std::sin(s), std::cos(s));
    return {c->center + c->radius * u, c->radius * w * du, -c->radius * w * w * u};
  }
  const auto& pl = std::get<PolylineReference>(ref);
  const Eigen::Index n = pl.points.front().size();
  ReferenceSample s{pl.points.front(), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  if (t <= pl.times.front()) return s;
  for (std::size_t i = 0; i + 1 < pl.points.size(); ++i) {
    if (t < pl.times[i + 1]) {
      const double T = pl.times[i + 1] - pl.times[i];
      s.v = (pl.points[i + 1] - pl.points[i]) / T;
      s.p = pl.points[i] + (t - pl.times[i]) * s.v;
      return s;
    }
  }
  s.p = pl.points.back();
  return s;
}

inline void validate(const Reference& ref, int dim) {
  if (const auto* c = std::get_if<CircleReference>(&ref)) {
    if (dim != 2 || c->center.size() != 2) throw ConfigError("circle reference is planar");
    if (!(c->radius > 0.0) || !(c->period > 0.0)) throw ConfigError("circle reference needs positive radius and period");
    return;
  }
  const auto& pl = std::get<PolylineReference>(ref);
  if (pl.points.empty() || pl.points.size() != pl.times.size()) {
    throw ConfigError("polyline reference needs one time per waypoint");
  }
  for (std::size_t i = 0; i < pl.points.size(); ++i) {
    if (pl.points[i].size() != dim) throw ConfigError("waypoint has the wrong dimension");
    if (i > 0 && !(pl.times[i] > pl.times[i - 1])) throw ConfigError("waypoint times must increase");
  }
}

enum class NominalKind { goal_pd, trajectory_pd };

struct NominalController {
  NominalKind kind = NominalKind::goal_pd;
  double kp = 1.0;
  double kd = 2.0;
  Eigen::VectorXd goal;
  std::optional<Reference> reference;

  void validate(int dim) const {
    if (!(kp > 0.0) || !(kd > 0.0)) throw ConfigError("controller gains must be positive");
    if (kind == NominalKind::goal_pd && goal.size() != dim) throw ConfigError("goal has the wrong dimension");
    if (kind == NominalKind::trajectory_pd) {
      if (!reference) throw ConfigError("trajectory controller needs a reference");
      scalecbf::validate(*reference, dim);
    }
  }

  Eigen::VectorXd operator()(double t, const Eigen::VectorXd& p, const Eigen::VectorXd& v) const {
    if (kind == NominalKind::goal_pd) return -kp * (p - goal) - kd * v;
    const ReferenceSample r = sample(*reference, t);
    return r.a - kp * (p - r.p) - kd * (v - r.v);
  }

  /// Position the controller is heading for at time t.
  Eigen::VectorXd target(double t) const {
    return kind == NominalKind::goal_pd ? goal : sample(*reference, t).p;
  }
};

// ---------------------------------------------------------------------------
// Scenario configuration

struct Obstacle {
  std::string name;
  Body body;
};

struct VelocityLimits {
  Eigen::VectorXd lo, hi;
  double gamma_l = 20.0;
  double gamma_u = 20.0;
};

enum class InfeasiblePolicy { halt, zero_clamp };
enum class ControlHold { zero_order, per_stage };

struct EquilibriumThresholds {
  double v_eps = 1e-3;
  double u_eps = 1e-3;
  double dwell = 1.0;
};

struct ScenarioConfig {
  std::string name = "custom";
  int dim = 2;
  ScalingPrimitive robot = ScalingPrimitive::ball(Eigen::Vector2d::Zero(), 0.5);
  Eigen::VectorXd robot_orientation = Eigen::VectorXd::Zero(1);  // heading, or quaternion (x, y, z, w)
  std::vector<Obstacle> obstacles;
  Eigen::VectorXd p0, v0;
  NominalController nominal;
  HocbfGains gains;

  bool smooth_min = false;
  double eta = 5.0;
  double phi0 = 0.3;

  bool circulation = false;
  Eigen::MatrixXd circulation_matrix;  // empty: default_skew(dim)
  DFunction d;
  double circulation_soft_weight = 0.0;

  std::optional<VelocityLimits> velocity_limits;
  Eigen::VectorXd u_lo, u_hi;
  std::optional<EquilibriumSet> equilibrium_set;  // unbounded configuration box by default

  double dt = 1e-3;
  double horizon = 30.0;
  std::uint64_t seed = 0;
  InfeasiblePolicy policy = InfeasiblePolicy::halt;
  ControlHold hold = ControlHold::zero_order;
  EquilibriumThresholds equilibrium;
  double goal_tol = 0.1;

  CirculationSpec circulation_spec() const {
    CirculationSpec s{circulation_matrix.size() ? circulation_matrix : default_skew(dim), d};
    return s;
  }

  EquilibriumSet equilibrium_box() const {
    return equilibrium_set ? *equilibrium_set : EquilibriumSet::unbounded(dim);
  }

  void validate() const {
    if (dim != 2 && dim != 3) throw ConfigError("dimension must be 2 or 3");
    if (robot.dim() != dim) throw ConfigError("robot shape has the wrong dimension");
    if (robot_orientation.size() != (dim == 2 ? 1 : 4)) throw ConfigError("robot orientation has the wrong size");
    if (p0.size() != dim || v0.size() != dim) throw ConfigError("initial state has the wrong dimension");
    if (!p0.allFinite() || !v0.allFinite()) throw ConfigError("initial state must be finite");
    if (!(dt > 0.0) || !(horizon > 0.0)) throw ConfigError("dt and horizon must be positive");
    if (horizon / dt > 1e8) throw ConfigError("too many steps");
    try {
      gains.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    nominal.validate(dim);
    for (const Obstacle& o : obstacles) {
      if (o.body.shape.dim() != dim || o.body.frame.dim() != dim) {
        throw ConfigError("obstacle " + o.name + " has the wrong dimension");
      }
      try {
        PrimitivePair(robot_body(), o.body);
      } catch (const InvalidArgument& e) {
        throw ConfigError("obstacle " + o.name + ": " + e.what());
      }
    }
    if (smooth_min && (!(eta > 0.0) || phi0 < 0.0)) throw ConfigError("smooth minimum needs eta > 0, phi0 >= 0");
    if (circulation) {
      if (obstacles.empty()) throw ConfigError("circulation needs a barrier");
      if (obstacles.size() > 1 && !smooth_min) {
        throw ConfigError("circulation with several obstacles needs the smooth minimum");
      }
      if (circulation_matrix.size() && circulation_matrix.rows() != dim) {
        throw ConfigError("circulation matrix has the wrong size");
      }
      circulation_spec().validate();
      if (circulation_soft_weight < 0.0) throw ConfigError("circulation weight must be nonnegative");
    }
    if (velocity_limits) {
      const VelocityLimits& l = *velocity_limits;
      if (l.lo.size() != dim || l.hi.size() != dim || (l.lo.array() > l.hi.array()).any()) {
        throw ConfigError("velocity limits are malformed");
      }
      if (!(l.gamma_l > 0.0) || !(l.gamma_u > 0.0)) throw ConfigError("velocity limit gains must be positive");
    }
    if ((u_lo.size() && u_lo.size() != dim) || (u_hi.size() && u_hi.size() != dim)) {
      throw ConfigError("input box has the wrong size");
    }
    if (u_lo.size() && u_hi.size() && (u_lo.array() > u_hi.array()).any()) throw ConfigError("input box is empty");
    if (equilibrium_set && (equilibrium_set->lo.size() != dim || equilibrium_set->hi.size() != dim ||
                            (equilibrium_set->lo.array() > equilibrium_set->hi.array()).any())) {
      throw ConfigError("equilibrium box is malformed");
    }
    if (!(goal_tol > 0.0)) throw ConfigError("goal tolerance must be positive");
    if (!(equilibrium.v_eps > 0.0) || !(equilibrium.u_eps > 0.0) || !(equilibrium.dwell > 0.0)) {
      throw ConfigError("equilibrium thresholds must be positive");
    }
  }

  Frame robot_frame(const Eigen::VectorXd& p) const {
    if (dim == 2) return Frame::planar(p, robot_orientation(0));
    return Frame::spatial(p, robot_orientation);
  }

  Body robot_body(const Eigen::VectorXd& p) const { return Body{robot, robot_frame(p)}; }
  Body robot_body() const { return robot_body(p0); }

  std::unique_ptr<TaskMap> task_map() const {
    if (dim == 2) return std::make_unique<PlanarPointMap>(robot_orientation(0));
    return std::make_unique<SpatialPointMap>(Eigen::Vector4d(robot_orientation));
  }

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(horizon / dt)); }
};

// ---------------------------------------------------------------------------
// Log

struct LogRecord {
  double t = 0.0;
  Eigen::VectorXd cfg, vel;
  Eigen::VectorXd u_nominal, u_filtered;
  std::vector<double> h;
  double phi = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> active_rows;  // indices into the step's row list
  QpStatus qp_status = QpStatus::optimal;
  double qp_time_us = 0.0;
  double sens_time_us = 0.0;
  bool violation = false;  // zero-input fallback used
};

struct TrajectoryLog {
  std::vector<std::string> barrier_names;
  int dim = 2;
  std::vector<LogRecord> records;

  bool empty() const { return records.empty(); }
  double min_h() const {
    double m = std::numeric_limits<double>::infinity();
    for (const LogRecord& r : records)
      for (double h : r.h) m = std::min(m, h);
    return m;
  }
};

// ---------------------------------------------------------------------------
// Equilibrium detection

struct EquilibriumReport {
  bool detected = false;
  double t0 = 0.0, t1 = 0.0;
  Eigen::VectorXd mean_cfg, mean_vel;
  double h_min = std::numeric_limits<double>::quiet_NaN();
  /// 1: nominal equals filtered input; 2: the filter holds the body.
  int equilibrium_case = 0;
  /// For case 2 under a plain HOCBF filter: h_min <= 0.05.
  bool on_boundary = false;
};

inline constexpr double kBoundaryTol = 0.05;

inline EquilibriumReport detect_equilibrium(const TrajectoryLog& log, double v_eps = 1e-3, double u_eps = 1e-3,
                                            double dwell = 1.0) {
  if (log.empty()) throw InvalidArgument("equilibrium detection needs a nonempty log");
  EquilibriumReport rep;
  std::size_t start = 0;
  bool in_run = false;
  for (std::size_t k = 0; k < log.records.size(); ++k) {
    const LogRecord& r = log.records[k];
    const bool still = r.vel.norm() <= v_eps && r.u_filtered.norm() <= u_eps;  // zeta = 0
    if (!still) {
      in_run = false;
      continue;
    }
    if (!in_run) start = k, in_run = true;
    if (r.t - log.records[start].t + 1e-12 < dwell) continue;

    rep.detected = true;
    rep.t0 = log.records[start].t;
    rep.t1 = r.t;
    rep.mean_cfg = Eigen::VectorXd::Zero(r.cfg.size());
    rep.mean_vel = Eigen::VectorXd::Zero(r.vel.size());
    double gap = 0.0;
    for (std::size_t j = start; j <= k; ++j) {
      rep.mean_cfg += log.records[j].cfg;
      rep.mean_vel += log.records[j].vel;
      gap = std::max(gap, (log.records[j].u_nominal - log.records[j].u_filtered).norm());
    }
    const double cnt = static_cast<double>(k - start + 1);
    rep.mean_cfg /= cnt;
    rep.mean_vel /= cnt;
    rep.h_min = r.h.empty() ? std::numeric_limits<double>::infinity() : *std::min_element(r.h.begin(), r.h.end());
    rep.equilibrium_case = gap <= u_eps ? 1 : 2;
    rep.on_boundary = rep.h_min <= kBoundaryTol;
    return rep;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Simulator

struct StepRows {
  std::vector<ConstraintRow> rows;
  std::vector<double> h;
  double phi = std::numeric_limits<double>::quiet_NaN();
  double equilibrium_distance = 0.0;
};

class Simulator {
 public:
  explicit Simulator(ScenarioConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    map_ = cfg_.task_map();
    warm_.resize(cfg_.obstacles.size());
  }

  const ScenarioConfig& config() const { return cfg_; }

  PlantState initial_state() const { return PlantState{0.0, cfg_.p0, cfg_.v0}; }

  /// Barrier values and QP rows at a state.
  StepRows rows(double t, const Eigen::VectorXd& p, const Eigen::VectorXd& v, double* sens_us = nullptr) {
    (void)t;
    const auto t0 = std::chrono::steady_clock::now();
    StepRows out;
    const TaskMapEval map = map_->evaluate(p, v);
    std::vector<BarrierKinematics> kins;
    for (std::size_t i = 0; i < cfg_.obstacles.size(); ++i) {
      const PrimitivePair pair(cfg_.robot_body(p), cfg_.obstacles[i].body);
      const AlphaSensitivity s = alpha_sensitivity(pair, solve(pair, i), 2);
      kins.push_back(barrier_kinematics(pair, s, map, RobotSlot::a, cfg_.gains));
      out.h.push_back(kins.back().h);
    }
    if (sens_us) {
      *sens_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
    }

    const EquilibriumProjection proj = equilibrium_projector(cfg_.equilibrium_box(), p, v);
    out.equilibrium_distance = proj.distance;
    std::optional<BarrierKinematics> lead;
    if (cfg_.smooth_min && !kins.empty()) {
      SmoothMin sm;
      lead = smooth_min_kinematics(kins, cfg_.eta, cfg_.phi0, &sm);
      out.phi = sm.phi;
      ConstraintRow r = hocbf_row(*lead, cfg_.gains, &diag_);
      r.label = "phi";
      out.rows.push_back(std::move(r));
    } else {
      for (std::size_t i = 0; i < kins.size(); ++i) {
        ConstraintRow r = hocbf_row(kins[i], cfg_.gains, &diag_);
        r.label = cfg_.obstacles[i].name;
        out.rows.push_back(std::move(r));
      }
      if (kins.size() == 1) lead = kins.front(), out.phi = kins.front().h;
    }
    if (cfg_.circulation && lead) {
      ConstraintRow c = circulation_row(cfg_.circulation_spec(), out.rows.front().a, lead->h, proj.distance,
                                        equilibrium_input(cfg_.dim));
      c.soft_weight = cfg_.circulation_soft_weight;
      out.rows.push_back(std::move(c));
    }
    if (cfg_.velocity_limits) {
      const VelocityLimits& l = *cfg_.velocity_limits;
      for (ConstraintRow& r : first_order_limit_rows(velocity_box_limits(v, l.lo, l.hi, l.gamma_l, l.gamma_u))) {
        out.rows.push_back(std::move(r));
      }
    }
    return out;
  }

  struct Control {
    Eigen::VectorXd u_nominal, u;
    StepRows rows;
    QpStatus status = QpStatus::optimal;
    std::vector<int> active;
    double qp_us = 0.0, sens_us = 0.0;
    bool violation = false;
  };

  Control control(double t, const Eigen::VectorXd& p, const Eigen::VectorXd& v) {
    Control c;
    c.u_nominal = cfg_.nominal(t, p, v);
    c.rows = rows(t, p, v, &c.sens_us);
    const auto t0 = std::chrono::steady_clock::now();
    const SafetyFilterProblem f = assemble_filter(c.u_nominal, c.rows.rows, cfg_.u_lo, cfg_.u_hi);
    const FilterResult r = solve_filter(f);
    c.qp_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
    for (const std::string& m : f.diag.messages) diag_.note(m);
    c.status = r.qp.status;
    for (std::size_t k = 0; k < r.row_active.size(); ++k) {
      if (r.row_active[k]) c.active.push_back(f.source[k]);
    }
    if (c.status == QpStatus::optimal) {
      c.u = r.u;
    } else {
      c.u = Eigen::VectorXd::Zero(cfg_.dim);
      if (cfg_.u_lo.size()) c.u = c.u.cwiseMax(cfg_.u_lo);
      if (cfg_.u_hi.size()) c.u = c.u.cwiseMin(cfg_.u_hi);
      c.violation = true;
    }
    return c;
  }

  /// One step from `s`: evaluates the filter at s, logs it and integrates.
  std::pair<PlantState, LogRecord> step(const PlantState& s) {
    const Control c = control(s.t, s.cfg, s.vel);
    LogRecord rec = record(s, c);
    const int n = cfg_.dim;
    Eigen::VectorXd x(2 * n);
    x << s.cfg, s.vel;
    Eigen::VectorXd xn;
    if (cfg_.hold == ControlHold::zero_order) {
      const Eigen::VectorXd u = c.u;
      auto f = [&](double, const Eigen::VectorXd& y) {
        Eigen::VectorXd d(2 * n);
        d << y.tail(n), u;
        return d;
      };
      xn = rk4(f, s.t, x, cfg_.dt);
    } else {
      auto f = [&](double t, const Eigen::VectorXd& y) {
        Eigen::VectorXd d(2 * n);
        d << y.tail(n), control(t, y.head(n), y.tail(n)).u;
        return d;
      };
      xn = rk4(f, s.t, x, cfg_.dt);
    }
    return {PlantState{s.t + cfg_.dt, xn.head(n), xn.tail(n)}, std::move(rec)};
  }

  LogRecord record(const PlantState& s, const Control& c) const {
    LogRecord rec;
    rec.t = s.t;
    rec.cfg = s.cfg;
    rec.vel = s.vel;
    rec.u_nominal = c.u_nominal;
    rec.u_filtered = c.u;
    rec.h = c.rows.h;
    rec.phi = c.rows.phi;
    rec.active_rows = c.active;
    rec.qp_status = c.status;
    rec.qp_time_us = c.qp_us;
    rec.sens_time_us = c.sens_us;
    rec.violation = c.violation;
    return rec;
  }

  const Diagnostics& diagnostics() const { return diag_; }

 private:
  // Closed forms where available, otherwise Newton warm-started from the
  // previous step of the same obstacle.
  MinScalingSolution solve(const PrimitivePair& pair, std::size_t i) {
    MinScalingSolution s;
    const bool closed = pair.kind() == PairKind::ellipsoid_ellipsoid || pair.kind() == PairKind::ellipsoid_halfspace ||
                        pair.kind() == PairKind::halfspace_ellipsoid;
    if (closed || !warm_[i]) {
      s = solve_min_scaling(pair);
    } else {
      try {
        s = newton_kkt(pair, warm_[i]);
      } catch (const SolverFailure&) {
        s = solve_min_scaling(pair);
      }
    }
    if (s.constraint_active) {
      warm_[i] = KktInit{s.p, s.lambda};
    } else {
      warm_[i].reset();
    }
    return s;
  }

  ScenarioConfig cfg_;
  std::unique_ptr<TaskMap> map_;
  std::vector<std::optional<KktInit>> warm_;
  Diagnostics diag_;
};

// ---------------------------------------------------------------------------
// Rollout

struct RunSummary {
  bool goal_reached = false;
  double final_goal_distance = 0.0;
  EquilibriumReport equilibrium;
  double min_h = std::numeric_limits<double>::infinity();
  double qp_time_p50_us = 0.0;
  double qp_time_p90_us = 0.0;
  std::size_t steps = 0;
  bool halted = false;  // stopped on an infeasible QP
  bool all_optimal = true;
  bool violation = false;
  double max_speed = 0.0;
  std::vector<std::string> diagnostics;
};

struct RunResult {
  TrajectoryLog log;
  RunSummary summary;
};

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline RunSummary summarize(const ScenarioConfig& cfg, const TrajectoryLog& log, bool halted) {
  RunSummary s;
  s.halted = halted;
  s.steps = log.records.size();
  if (log.empty()) return s;
  std::vector<double> times;
  for (const LogRecord& r : log.records) {
    times.push_back(r.qp_time_us);
    s.all_optimal = s.all_optimal && r.qp_status == QpStatus::optimal;
    s.violation = s.violation || r.violation;
    s.max_speed = std::max(s.max_speed, r.vel.lpNorm<Eigen::Infinity>());
  }
  s.min_h = log.min_h();
  s.qp_time_p50_us = percentile(times, 0.5);
  s.qp_time_p90_us = percentile(times, 0.9);
  const LogRecord& last = log.records.back();
  s.final_goal_distance = (last.cfg - cfg.nominal.target(last.t)).norm();
  s.goal_reached = !halted && s.final_goal_distance <= cfg.goal_tol;
  s.equilibrium = detect_equilibrium(log, cfg.equilibrium.v_eps, cfg.equilibrium.u_eps, cfg.equilibrium.dwell);
  return s;
}

/// Full deterministic rollout over [0, horizon]; the last record holds the
/// final state.
inline RunResult run_scenario(const ScenarioConfig& cfg) {
  Simulator sim(cfg);
  RunResult out;
  out.log.dim = cfg.dim;
  for (const Obstacle& o : cfg.obstacles) out.log.barrier_names.push_back(o.name);
  PlantState s = sim.initial_state();
  const std::size_t n = cfg.steps();
  bool halted = false;
  for (std::size_t k = 0; k <= n; ++k) {
    if (k == n) {
      out.log.records.push_back(sim.record(s, sim.control(s.t, s.cfg, s.vel)));
      break;
    }
    auto [next, rec] = sim.step(s);
    const bool stop = rec.qp_status != QpStatus::optimal && cfg.policy == InfeasiblePolicy::halt;
    out.log.records.push_back(std::move(rec));
    if (stop) {
      halted = true;
      break;
    }
    s = next;
    s.t = static_cast<double>(k + 1) * cfg.dt;
  }
  out.summary = summarize(cfg, out.log, halted);
  out.summary.diagnostics = sim.diagnostics().messages;
  return out;
}

}  // namespace scalecbf
