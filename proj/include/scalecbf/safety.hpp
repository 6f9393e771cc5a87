#pragma once

// Safety filter rows built on alpha* sensitivities.
//
// A barrier h(x) = alpha*(theta(x)) - alpha0 of relative degree two is
// summarised by its value, rate and the split  h_ddot = drift + a'u.
// From that, the HOCBF row is  a'u >= -drift - (g1 + g2) h_dot - g1 g2 h.

#include <Eigen/Dense>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "scalecbf/errors.hpp"
#include "scalecbf/frame.hpp"
#include "scalecbf/qp.hpp"
#include "scalecbf/sensitivity.hpp"

namespace scalecbf {

inline constexpr double kDegenerateRowTol = 1e-12;

struct HocbfGains {
  double alpha0 = 1.03;
  double gamma1 = 5.0;
  double gamma2 = 5.0;

  void validate() const {
    if (!(alpha0 > 1.0)) throw InvalidArgument("alpha0 must exceed 1");
    if (!(gamma1 > 0.0) || !(gamma2 > 0.0)) throw InvalidArgument("class-K gains must be positive");
  }
};

enum class RowKind { hocbf, circulation, first_order_limit, box };

inline const char* to_string(RowKind k) {
  switch (k) {
    case RowKind::hocbf: return "hocbf";
    case RowKind::circulation: return "circulation";
    case RowKind::first_order_limit: return "first_order_limit";
    case RowKind::box: return "box";
  }
  return "unknown";
}

/// a'u >= b. A positive soft_weight makes the row soft with penalty w*delta^2.
struct ConstraintRow {
  Eigen::VectorXd a;
  double b = 0.0;
  RowKind kind = RowKind::hocbf;
  double soft_weight = 0.0;
  std::string label;

  bool soft() const { return soft_weight > 0.0; }
  double slack(const Eigen::VectorXd& u) const { return a.dot(u) - b; }
};

// ---------------------------------------------------------------------------
// Task maps

/// theta(x), its rate J*cfg_dot and the split theta_ddot = b_theta + A_theta u.
struct TaskMapEval {
  Eigen::VectorXd theta;
  Eigen::MatrixXd J;
  Eigen::VectorXd theta_dot;
  Eigen::VectorXd b_theta;
  Eigen::MatrixXd A_theta;
};

class TaskMap {
 public:
  virtual ~TaskMap() = default;
  virtual int config_size() const = 0;
  virtual int velocity_size() const = 0;
  virtual int input_size() const = 0;
  virtual int theta_size() const = 0;
  virtual TaskMapEval evaluate(const Eigen::VectorXd& cfg, const Eigen::VectorXd& vel) const = 0;

 protected:
  void check(const Eigen::VectorXd& cfg, const Eigen::VectorXd& vel) const {
    if (cfg.size() != config_size() || vel.size() != velocity_size()) {
      throw InvalidArgument("state does not match the task map");
    }
  }
};

/// Translating planar body with fixed heading under p_ddot = u.
class PlanarPointMap final : public TaskMap {
 public:
  explicit PlanarPointMap(double heading = 0.0) : heading_(heading) {}
  int config_size() const override { return 2; }
  int velocity_size() const override { return 2; }
  int input_size() const override { return 2; }
  int theta_size() const override { return 3; }
  TaskMapEval evaluate(const Eigen::VectorXd& cfg, const Eigen::VectorXd& vel) const override {
    check(cfg, vel);
    TaskMapEval e;
    e.theta = Eigen::Vector3d(cfg(0), cfg(1), heading_);
    e.J = Eigen::MatrixXd::Identity(3, 2);
    e.theta_dot = e.J * vel;
    e.b_theta = Eigen::VectorXd::Zero(3);
    e.A_theta = e.J;
    return e;
  }

 private:
  double heading_;
};

/// Planar rigid body (x, y, beta) driven by its second derivative.
class PlanarRigidMap final : public TaskMap {
 public:
  int config_size() const override { return 3; }
  int velocity_size() const override { return 3; }
  int input_size() const override { return 3; }
  int theta_size() const override { return 3; }
  TaskMapEval evaluate(const Eigen::VectorXd& cfg, const Eigen::VectorXd& vel) const override {
    check(cfg, vel);
    TaskMapEval e;
    e.theta = cfg;
    e.J = Eigen::MatrixXd::Identity(3, 3);
    e.theta_dot = vel;
    e.b_theta = Eigen::VectorXd::Zero(3);
    e.A_theta = e.J;
    return e;
  }
};

/// Translating spatial body with fixed orientation quaternion (x, y, z, w).
class SpatialPointMap final : public TaskMap {
 public:
  explicit SpatialPointMap(const Eigen::Vector4d& xi = Eigen::Vector4d(0, 0, 0, 1)) : xi_(xi) {}
  int config_size() const override { return 3; }
  int velocity_size() const override { return 3; }
  int input_size() const override { return 3; }
  int theta_size() const override { return 7; }
  TaskMapEval evaluate(const Eigen::VectorXd& cfg, const Eigen::VectorXd& vel) const override {
    check(cfg, vel);
    TaskMapEval e;
    e.theta.resize(7);
    e.theta << cfg, xi_;
    e.J = Eigen::MatrixXd::Identity(7, 3);
    e.theta_dot = e.J * vel;
    e.b_theta = Eigen::VectorXd::Zero(7);
    e.A_theta = e.J;
    return e;
  }

 private:
  Eigen::Vector4d xi_;
};

/// Spatial rigid body: cfg = (o, xi), vel = (v, omega) with omega in the
/// world frame, input = (v_dot, omega_dot).
class SpatialRigidMap final : public TaskMap {
 public:
  int config_size() const override { return 7; }
  int velocity_size() const override { return 6; }
  int input_size() const override { return 6; }
  int theta_size() const override { return 7; }
  TaskMapEval evaluate(const Eigen::VectorXd& cfg, const Eigen::VectorXd& vel) const override {
    check(cfg, vel);
    const Eigen::Vector4d xi = cfg.tail(4);
    const Eigen::Vector3d omega = vel.tail(3);
    TaskMapEval e;
    e.theta = cfg;
    e.J = Eigen::MatrixXd::Zero(7, 6);
    e.J.topLeftCorner(3, 3).setIdentity();
    e.J.bottomRightCorner(4, 3) = 0.5 * quaternion_rate_matrix(xi);
    e.theta_dot = e.J * vel;
    // Q is linear in xi, so d/dt Q(xi) = Q(xi_dot).
    const Eigen::Vector4d xi_dot = e.theta_dot.tail(4);
    e.b_theta = Eigen::VectorXd::Zero(7);
    e.b_theta.tail(4) = 0.5 * quaternion_rate_matrix(xi_dot) * omega;
    e.A_theta = e.J;
    return e;
  }
};

// ---------------------------------------------------------------------------
// Barriers

/// Which pair member the task map moves; the other one is static.
enum class RobotSlot { a, b };

/// h, h_dot and the decomposition h_ddot = drift + a'u.
struct BarrierKinematics {
  double h = 0.0;
  double h_dot = 0.0;
  double drift = 0.0;
  Eigen::VectorXd a;

  double psi1(const HocbfGains& g) const { return h_dot + g.gamma1 * h; }
};

inline double barrier_value(const AlphaSensitivity& sens, const HocbfGains& gains) {
  return sens.solution.alpha - gains.alpha0;
}

inline BarrierKinematics barrier_kinematics(const PrimitivePair& pair, const AlphaSensitivity& sens,
                                            const TaskMapEval& map, RobotSlot slot,
                                            const HocbfGains& gains) {
  const int start = slot == RobotSlot::a ? 0 : pair.theta_a_size();
  const int len = slot == RobotSlot::a ? pair.theta_a_size() : pair.theta_b_size();
  if (map.theta.size() != len) throw InvalidArgument("task map theta does not match the robot body");
  if (sens.hess.rows() != pair.theta_size()) throw InvalidArgument("barrier rows need the alpha Hessian");
  const Eigen::VectorXd g = sens.grad.segment(start, len);
  const Eigen::MatrixXd H = sens.hess.block(start, start, len, len);
  BarrierKinematics k;
  k.h = barrier_value(sens, gains);
  k.h_dot = g.dot(map.theta_dot);
  k.drift = map.theta_dot.dot(H * map.theta_dot) + g.dot(map.b_theta);
  k.a = map.A_theta.transpose() * g;
  return k;
}

/// Row of psi1_dot + gamma2 psi1 >= 0 with linear class-K gains.
inline ConstraintRow hocbf_row(const BarrierKinematics& k, const HocbfGains& gains,
                               Diagnostics* diag = nullptr) {
  ConstraintRow row;
  row.kind = RowKind::hocbf;
  row.a = k.a;
  row.b = -k.drift - (gains.gamma1 + gains.gamma2) * k.h_dot - gains.gamma1 * gains.gamma2 * k.h;
  if (diag && k.h >= 0.0 && k.a.norm() < kDegenerateRowTol) {
    diag->note("HOCBF row has vanishing input coefficient at h = " + std::to_string(k.h));
  }
  return row;
}

inline ConstraintRow hocbf_row(const PrimitivePair& pair, const AlphaSensitivity& sens,
                               const TaskMapEval& map, RobotSlot slot, const HocbfGains& gains,
                               Diagnostics* diag = nullptr) {
  return hocbf_row(barrier_kinematics(pair, sens, map, slot, gains), gains, diag);
}

struct SmoothMin {
  double phi = 0.0;   // includes the -phi0 offset
  double h_min = 0.0;
  Eigen::VectorXd weights;
};

/// phi = -(1/eta) ln((1/K) sum exp(-eta h_i)) - phi0, evaluated with h_min
/// factored out.
inline SmoothMin smooth_min(const Eigen::VectorXd& h, double eta, double phi0) {
  if (h.size() == 0) throw InvalidArgument("smooth minimum needs at least one value");
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  SmoothMin s;
  s.h_min = h.minCoeff();
  const Eigen::ArrayXd e = (-eta * (h.array() - s.h_min)).exp();
  const double sum = e.sum();
  const double K = static_cast<double>(h.size());
  s.phi = -std::log(sum / K) / eta + s.h_min - phi0;
  s.weights = e / sum;
  assert(s.phi + phi0 >= s.h_min - 1e-12 && s.phi + phi0 <= s.h_min + std::log(K) / eta + 1e-12);
  return s;
}

/// Kinematics of phi from those of the h_i; the weight derivatives add
/// -eta (sum w_i h_dot_i^2 - phi_dot^2) to the drift.
inline BarrierKinematics smooth_min_kinematics(const std::vector<BarrierKinematics>& parts, double eta,
                                               double phi0, SmoothMin* out = nullptr) {
  if (parts.empty()) throw InvalidArgument("smooth minimum needs at least one barrier");
  Eigen::VectorXd h(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) h(static_cast<Eigen::Index>(i)) = parts[i].h;
  const SmoothMin sm = smooth_min(h, eta, phi0);
  BarrierKinematics k;
  k.h = sm.phi;
  k.a = Eigen::VectorXd::Zero(parts.front().a.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double w = sm.weights(static_cast<Eigen::Index>(i));
    if (parts[i].a.size() != k.a.size()) throw InvalidArgument("barriers disagree on the input size");
    k.h_dot += w * parts[i].h_dot;
    k.drift += w * parts[i].drift;
    k.a += w * parts[i].a;
    sq += w * parts[i].h_dot * parts[i].h_dot;
  }
  k.drift -= eta * (sq - k.h_dot * k.h_dot);
  if (out) *out = sm;
  return k;
}

inline ConstraintRow smooth_min_hocbf_row(const std::vector<BarrierKinematics>& parts, double eta,
                                          double phi0, const HocbfGains& gains,
                                          Diagnostics* diag = nullptr) {
  ConstraintRow row = hocbf_row(smooth_min_kinematics(parts, eta, phi0), gains, diag);
  row.label = "smooth_min";
  return row;
}

// ---------------------------------------------------------------------------
// Circulation

/// How odd input dimensions get a skew matrix: refuse, or leave the first
/// component out and rotate the remaining pairs.
enum class OddSkewRule { reject, zero_first };

/// Block-diagonal [[0, 1], [-1, 0]] for even sizes. For odd sizes with
/// zero_first: c = (0, -a3, a2, -a5, a4, ...).
inline Eigen::MatrixXd default_skew(int n_u, OddSkewRule rule = OddSkewRule::reject) {
  if (n_u < 2) throw ConfigError("circulation needs at least two inputs");
  Eigen::MatrixXd Phi = Eigen::MatrixXd::Zero(n_u, n_u);
  if (n_u % 2 == 0) {
    for (int i = 0; i < n_u; i += 2) Phi(i, i + 1) = 1.0, Phi(i + 1, i) = -1.0;
    return Phi;
  }
  if (rule == OddSkewRule::reject) {
    throw ConfigError("odd input dimension needs a virtual-component rule for the circulation matrix");
  }
  for (int i = 1; i < n_u; i += 2) Phi(i, i + 1) = -1.0, Phi(i + 1, i) = 1.0;
  return Phi;
}

enum class DFunctionKind { linear, exponential };

/// d(h, dist): linear 1 - d1 h - d2 dist, or
/// exponential d1 (1 - exp(d2 (h - d3))) + d4 (exp(-(dist/d5)^2) - 1).
struct DFunction {
  DFunctionKind kind = DFunctionKind::linear;
  double d1 = 1.0, d2 = 1.0, d3 = 0.0, d4 = 0.0, d5 = 1.0;

  static DFunction linear(double d1, double d2) {
    DFunction d;
    d.kind = DFunctionKind::linear;
    d.d1 = d1;
    d.d2 = d2;
    return d;
  }
  static DFunction exponential(double d1, double d2, double d3, double d4, double d5) {
    return DFunction{DFunctionKind::exponential, d1, d2, d3, d4, d5};
  }

  double operator()(double h, double dist) const {
    if (kind == DFunctionKind::linear) return 1.0 - d1 * h - d2 * dist;
    const double r = dist / d5;
    return d1 * (1.0 - std::exp(d2 * (h - d3))) + d4 * (std::exp(-r * r) - 1.0);
  }

  void validate() const {
    const bool ok = kind == DFunctionKind::linear
                        ? d1 > 0.0 && d2 > 0.0
                        : d1 > 0.0 && d2 > 0.0 && d3 > 0.0 && d4 > 0.0 && d5 > 0.0;
    if (!ok) throw ConfigError("d-function parameters must be positive");
    if (!((*this)(0.0, 0.0) > 0.0)) throw ConfigError("d-function must satisfy d(0, 0) > 0");
  }
};

struct CirculationSpec {
  Eigen::MatrixXd Phi;
  DFunction d;

  void validate() const {
    if (Phi.rows() != Phi.cols() || Phi.rows() < 2) throw ConfigError("circulation matrix must be square");
    if ((Phi + Phi.transpose()).cwiseAbs().maxCoeff() != 0.0) {
      throw ConfigError("circulation matrix must be skew-symmetric");
    }
    d.validate();
  }
};

/// c'u >= d(h, dist) + c'zeta  with c = Phi a.
inline ConstraintRow circulation_row(const CirculationSpec& spec, const Eigen::VectorXd& a, double h,
                                     double dist, const Eigen::VectorXd& zeta) {
  if (spec.Phi.rows() != a.size() || zeta.size() != a.size()) {
    throw InvalidArgument("circulation sizes disagree");
  }
  if (!a.allFinite()) throw InvalidArgument("circulation needs a finite barrier row");
  ConstraintRow row;
  row.kind = RowKind::circulation;
  row.a = spec.Phi * a;
  row.b = spec.d(h, dist) + row.a.dot(zeta);
  row.label = "circulation";
  return row;
}

// ---------------------------------------------------------------------------
// First-order limit rows

/// h_l with  h_l_dot = drift + a'u; the row is h_l_dot >= -gamma h_l.
struct AffineLimit {
  double value = 0.0;
  double drift = 0.0;
  Eigen::VectorXd a;
  double gamma = 1.0;
  std::string label;
};

inline std::vector<ConstraintRow> first_order_limit_rows(const std::vector<AffineLimit>& limits) {
  std::vector<ConstraintRow> rows;
  for (const AffineLimit& l : limits) {
    if (!(l.gamma > 0.0)) throw InvalidArgument("limit gain must be positive");
    ConstraintRow r;
    r.kind = RowKind::first_order_limit;
    r.a = l.a;
    r.b = -l.drift - l.gamma * l.value;
    r.label = l.label;
    rows.push_back(std::move(r));
  }
  return rows;
}

/// v_lo <= v <= v_hi for a double integrator (v_dot = u). Infinite bounds
/// produce no row.
inline std::vector<AffineLimit> velocity_box_limits(const Eigen::VectorXd& v, const Eigen::VectorXd& lo,
                                                    const Eigen::VectorXd& hi, double gamma_l,
                                                    double gamma_u) {
  const Eigen::Index n = v.size();
  if (lo.size() != n || hi.size() != n) throw InvalidArgument("velocity bounds have the wrong size");
  std::vector<AffineLimit> out;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(lo(i))) {
      out.push_back({v(i) - lo(i), 0.0, Eigen::VectorXd::Unit(n, i), gamma_l,
                     "v_lo_" + std::to_string(i)});
    }
    if (std::isfinite(hi(i))) {
      out.push_back({hi(i) - v(i), 0.0, -Eigen::VectorXd::Unit(n, i), gamma_u,
                     "v_hi_" + std::to_string(i)});
    }
  }
  return out;
}

/// Second-order position bounds q_lo <= q <= q_hi (q_ddot = u) as HOCBF
/// kinematics, to be turned into rows by hocbf_row.
inline std::vector<BarrierKinematics> position_box_barriers(const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                                            const Eigen::VectorXd& lo,
                                                            const Eigen::VectorXd& hi) {
  const Eigen::Index n = q.size();
  std::vector<BarrierKinematics> out;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(lo(i))) out.push_back({q(i) - lo(i), qd(i), 0.0, Eigen::VectorXd::Unit(n, i)});
    if (std::isfinite(hi(i))) out.push_back({hi(i) - q(i), -qd(i), 0.0, -Eigen::VectorXd::Unit(n, i)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Equilibrium set

/// Box on the configuration with zero velocity. zeta = 0 for
/// acceleration-level inputs.
struct EquilibriumSet {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  static EquilibriumSet unbounded(int n) {
    const double inf = std::numeric_limits<double>::infinity();
    return {Eigen::VectorXd::Constant(n, -inf), Eigen::VectorXd::Constant(n, inf)};
  }
};

struct EquilibriumProjection {
  Eigen::VectorXd cfg;
  Eigen::VectorXd vel;
  double distance = 0.0;
};

inline EquilibriumProjection equilibrium_projector(const EquilibriumSet& set, const Eigen::VectorXd& cfg,
                                                   const Eigen::VectorXd& vel) {
  if (set.lo.size() != cfg.size() || set.hi.size() != cfg.size()) {
    throw InvalidArgument("equilibrium box has the wrong size");
  }
  if ((set.lo.array() > set.hi.array()).any()) throw InvalidArgument("equilibrium box is empty");
  EquilibriumProjection p;
  p.cfg = cfg.cwiseMax(set.lo).cwiseMin(set.hi);
  p.vel = Eigen::VectorXd::Zero(vel.size());
  p.distance = std::sqrt((cfg - p.cfg).squaredNorm() + vel.squaredNorm());
  return p;
}

inline Eigen::VectorXd equilibrium_input(int n_u) { return Eigen::VectorXd::Zero(n_u); }

// ---------------------------------------------------------------------------
// Filter problem

struct BarrierDiagnostics {
  std::vector<double> h;
  std::vector<double> psi1;
  double phi = std::numeric_limits<double>::quiet_NaN();
  std::vector<bool> active;
  double equilibrium_distance = 0.0;
};

/// min ||u - u_n||^2 + sum w_s delta_s^2 over (u, delta). Slack columns
/// follow u in the order of the soft rows.
struct SafetyFilterProblem {
  QpProblem qp;
  int n_u = 0;
  std::vector<ConstraintRow> rows;   // rows kept, in QP order
  std::vector<int> source;           // index of each kept row in the input list
  std::vector<int> slack_column;     // -1 for hard rows
  Diagnostics diag;
};

inline SafetyFilterProblem assemble_filter(const Eigen::VectorXd& u_nominal, const std::vector<ConstraintRow>& rows,
                                           const Eigen::VectorXd& u_lo = {}, const Eigen::VectorXd& u_hi = {}) {
  const int n_u = static_cast<int>(u_nominal.size());
  if (n_u == 0 || !u_nominal.allFinite()) throw InvalidArgument("nominal input must be finite and nonempty");
  if ((u_lo.size() && u_lo.size() != n_u) || (u_hi.size() && u_hi.size() != n_u)) {
    throw InvalidArgument("input box has the wrong size");
  }
  SafetyFilterProblem f;
  f.n_u = n_u;
  int n_soft = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ConstraintRow& r = rows[i];
    if (r.a.size() != n_u) throw InvalidArgument("constraint row has the wrong size");
    if (!r.a.allFinite() || !std::isfinite(r.b)) throw InvalidArgument("constraint row is not finite");
    if (r.a.norm() < kDegenerateRowTol) {
      f.diag.note(std::string("dropped degenerate ") + to_string(r.kind) + " row " +
                  (r.label.empty() ? std::to_string(i) : r.label));
      continue;
    }
    f.rows.push_back(r);
    f.source.push_back(static_cast<int>(i));
    f.slack_column.push_back(r.soft() ? n_u + n_soft++ : -1);
  }
  const int n = n_u + n_soft, m = static_cast<int>(f.rows.size());
  const double inf = std::numeric_limits<double>::infinity();
  QpProblem& qp = f.qp;
  qp.H = Eigen::MatrixXd::Zero(n, n);
  qp.H.topLeftCorner(n_u, n_u).diagonal().setConstant(2.0);
  qp.f = Eigen::VectorXd::Zero(n);
  qp.f.head(n_u) = -2.0 * u_nominal;
  qp.G = Eigen::MatrixXd::Zero(m, n);
  qp.g.resize(m);
  for (int k = 0; k < m; ++k) {
    qp.G.row(k).head(n_u) = f.rows[k].a.transpose();
    qp.g(k) = f.rows[k].b;
    if (f.slack_column[k] >= 0) {
      qp.G(k, f.slack_column[k]) = 1.0;
      qp.H(f.slack_column[k], f.slack_column[k]) = 2.0 * f.rows[k].soft_weight;
    }
  }
  if (u_lo.size() || u_hi.size()) {
    qp.lb = Eigen::VectorXd::Constant(n, -inf);
    qp.ub = Eigen::VectorXd::Constant(n, inf);
    if (u_lo.size()) qp.lb.head(n_u) = u_lo;
    if (u_hi.size()) qp.ub.head(n_u) = u_hi;
  }
  return f;
}

struct FilterResult {
  QpSolution qp;
  Eigen::VectorXd u;
  Eigen::VectorXd slack;        // one per soft row
  std::vector<bool> row_active;  // per kept row
};

inline FilterResult solve_filter(const SafetyFilterProblem& f) {
  FilterResult r;
  r.qp = solve_qp(f.qp);
  r.u = r.qp.u.head(f.n_u);
  r.slack = r.qp.u.tail(r.qp.u.size() - f.n_u);
  for (std::size_t k = 0; k < f.rows.size(); ++k) {
    r.row_active.push_back(std::find(r.qp.active.begin(), r.qp.active.end(), static_cast<int>(k)) !=
                           r.qp.active.end());
  }
  return r;
}

}  // namespace scalecbf
