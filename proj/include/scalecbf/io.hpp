#pragma once

// JSON scenario documents, CSV trajectory logs and plot series.

#include <Eigen/Dense>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "scalecbf/errors.hpp"
#include "scalecbf/scaling.hpp"
#include "scalecbf/scenarios.hpp"
#include "scalecbf/sim.hpp"

namespace scalecbf {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr double kMaxKappa = 200.0;

namespace io_detail {

inline json vec(const Eigen::VectorXd& v) {
  json j = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

inline json mat(const Eigen::MatrixXd& m) {
  json j = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) j.push_back(vec(m.row(i).transpose()));
  return j;
}

inline const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  return j.at(key);
}

inline double num(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(where + ": must be finite");
  return v;
}

// Bounds may use the strings "inf" / "-inf".
inline double bound(const json& j, const std::string& where) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ConfigError(where + ": unknown bound '" + s + "'");
  }
  return num(j, where);
}

inline Eigen::VectorXd to_vec(const json& j, const std::string& where, bool bounds = false) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = bounds ? bound(j[i], where) : num(j[i], where);
  }
  return v;
}

inline json bound_vec(const Eigen::VectorXd& v) {
  json j = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isinf(v(i))) j.push_back(v(i) > 0 ? "inf" : "-inf");
    else j.push_back(v(i));
  }
  return j;
}

inline Eigen::MatrixXd to_mat(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a nonempty array of rows");
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].is_array() ? j[0].size() : 0);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Eigen::VectorXd r = to_vec(j[i], where);
    if (r.size() != cols) throw ConfigError(where + ": ragged matrix");
    m.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return m;
}

inline std::string str(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + ": expected a string");
  return j.get<std::string>();
}

inline bool boolean(const json& j, const std::string& where) {
  if (!j.is_boolean()) throw ConfigError(where + ": expected true or false");
  return j.get<bool>();
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Primitives and frames

inline json to_json(const ScalingPrimitive& p) {
  using io_detail::mat;
  using io_detail::vec;
  if (const Halfspace* h = p.as_halfspace()) return {{"type", "halfspace"}, {"a", vec(h->a)}, {"b", h->b}};
  if (const SmoothPolytope* s = p.as_polytope()) {
    return {{"type", "polytope"}, {"A", mat(s->A)}, {"b", vec(s->b)}, {"kappa", s->kappa}};
  }
  const Ellipsoid* e = p.as_ellipsoid();
  return {{"type", "ellipsoid"}, {"P", mat(e->P)}, {"mu", vec(e->mu)}};
}

inline ScalingPrimitive primitive_from_json(const json& j, const std::string& where) {
  using namespace io_detail;
  const std::string type = str(field(j, "type", where), where + ".type");
  try {
    if (type == "halfspace") {
      return ScalingPrimitive::halfspace(to_vec(field(j, "a", where), where + ".a"), num(field(j, "b", where), where + ".b"));
    }
    if (type == "polytope") {
      const double kappa = num(field(j, "kappa", where), where + ".kappa");
      if (kappa > kMaxKappa) throw ConfigError(where + ".kappa: at most 200");
      return ScalingPrimitive::polytope(to_mat(field(j, "A", where), where + ".A"), to_vec(field(j, "b", where), where + ".b"),
                                        kappa);
    }
    if (type == "ellipsoid") {
      return ScalingPrimitive::ellipsoid(to_mat(field(j, "P", where), where + ".P"), to_vec(field(j, "mu", where), where + ".mu"));
    }
    if (type == "ball") {
      return ScalingPrimitive::ball(to_vec(field(j, "center", where), where + ".center"),
                                    num(field(j, "radius", where), where + ".radius"));
    }
    if (type == "box") {
      const double kappa = num(field(j, "kappa", where), where + ".kappa");
      if (kappa > kMaxKappa) throw ConfigError(where + ".kappa: at most 200");
      return ScalingPrimitive::box(to_vec(field(j, "half_extents", where), where + ".half_extents"), kappa);
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  throw ConfigError(where + ": unknown primitive type '" + type + "'");
}

inline json to_json(const Frame& f) {
  if (f.dim() == 2) return {{"origin", io_detail::vec(f.origin())}, {"angle", f.angle()}};
  return {{"origin", io_detail::vec(f.origin())}, {"quaternion", io_detail::vec(f.quaternion())}};
}

inline Frame frame_from_json(const json& j, int dim, const std::string& where) {
  using namespace io_detail;
  const Eigen::VectorXd o = j.contains("origin") ? to_vec(j.at("origin"), where + ".origin") : Eigen::VectorXd::Zero(dim);
  if (o.size() != dim) throw ConfigError(where + ".origin: wrong dimension");
  if (dim == 2) {
    if (j.contains("quaternion")) throw ConfigError(where + ": planar frames take an angle");
    return Frame::planar(o, j.contains("angle") ? num(j.at("angle"), where + ".angle") : 0.0);
  }
  if (j.contains("angle")) throw ConfigError(where + ": spatial frames take a quaternion");
  Eigen::Vector4d q(0, 0, 0, 1);
  if (j.contains("quaternion")) {
    const Eigen::VectorXd v = to_vec(j.at("quaternion"), where + ".quaternion");
    if (v.size() != 4) throw ConfigError(where + ".quaternion: expected [x, y, z, w]");
    if (std::abs(v.norm() - 1.0) > kQuaternionNormTol) throw ConfigError(where + ".quaternion: must be unit");
    q = v;
  }
  return Frame::spatial(o, q);
}

// ---------------------------------------------------------------------------
// Scenario documents

inline json to_json(const Reference& r) {
  using io_detail::vec;
  if (const auto* c = std::get_if<CircleReference>(&r)) {
    return {{"type", "circle"}, {"center", vec(c->center)}, {"radius", c->radius}, {"period", c->period}, {"phase", c->phase}};
  }
  const auto& p = std::get<PolylineReference>(r);
  json pts = json::array();
  for (const auto& q : p.points) pts.push_back(vec(q));
  return {{"type", "polyline"}, {"points", pts}, {"times", p.times}};
}

inline Reference reference_from_json(const json& j, const std::string& where) {
  using namespace io_detail;
  const std::string type = str(field(j, "type", where), where + ".type");
  if (type == "circle") {
    CircleReference c;
    c.center = to_vec(field(j, "center", where), where + ".center");
    c.radius = num(field(j, "radius", where), where + ".radius");
    c.period = num(field(j, "period", where), where + ".period");
    if (j.contains("phase")) c.phase = num(j.at("phase"), where + ".phase");
    return c;
  }
  if (type == "polyline") {
    PolylineReference p;
    const json& pts = field(j, "points", where);
    if (!pts.is_array()) throw ConfigError(where + ".points: expected an array");
    for (const json& q : pts) p.points.push_back(to_vec(q, where + ".points"));
    const Eigen::VectorXd t = to_vec(field(j, "times", where), where + ".times");
    p.times.assign(t.data(), t.data() + t.size());
    return p;
  }
  throw ConfigError(where + ": unknown reference type '" + type + "'");
}

inline json to_json(const DFunction& d) {
  if (d.kind == DFunctionKind::linear) return {{"kind", "linear"}, {"d1", d.d1}, {"d2", d.d2}};
  return {{"kind", "exponential"}, {"d1", d.d1}, {"d2", d.d2}, {"d3", d.d3}, {"d4", d.d4}, {"d5", d.d5}};
}

inline json to_json(const ScenarioConfig& c) {
  using io_detail::bound_vec;
  using io_detail::mat;
  using io_detail::vec;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["name"] = c.name;
  j["dim"] = c.dim;
  j["robot"] = {{"shape", to_json(c.robot)}, {"orientation", vec(c.robot_orientation)}};
  json obs = json::array();
  for (const Obstacle& o : c.obstacles) {
    obs.push_back({{"name", o.name}, {"shape", to_json(o.body.shape)}, {"frame", to_json(o.body.frame)}});
  }
  j["obstacles"] = obs;
  j["initial"] = {{"position", vec(c.p0)}, {"velocity", vec(c.v0)}};
  json nom = {{"kind", c.nominal.kind == NominalKind::goal_pd ? "goal_pd" : "trajectory_pd"},
              {"kp", c.nominal.kp},
              {"kd", c.nominal.kd}};
  if (c.nominal.goal.size()) nom["goal"] = vec(c.nominal.goal);
  if (c.nominal.reference) nom["reference"] = to_json(*c.nominal.reference);
  j["nominal"] = nom;
  j["gains"] = {{"alpha0", c.gains.alpha0}, {"gamma1", c.gains.gamma1}, {"gamma2", c.gains.gamma2}};
  j["smooth_min"] = {{"enabled", c.smooth_min}, {"eta", c.eta}, {"phi0", c.phi0}};
  json circ = {{"enabled", c.circulation}, {"d", to_json(c.d)}, {"soft_weight", c.circulation_soft_weight}};
  if (c.circulation_matrix.size()) circ["matrix"] = mat(c.circulation_matrix);
  j["circulation"] = circ;
  if (c.velocity_limits) {
    j["velocity_limits"] = {{"lo", bound_vec(c.velocity_limits->lo)},
                            {"hi", bound_vec(c.velocity_limits->hi)},
                            {"gamma_l", c.velocity_limits->gamma_l},
                            {"gamma_u", c.velocity_limits->gamma_u}};
  }
  if (c.u_lo.size() || c.u_hi.size()) {
    json box = json::object();
    if (c.u_lo.size()) box["lo"] = bound_vec(c.u_lo);
    if (c.u_hi.size()) box["hi"] = bound_vec(c.u_hi);
    j["input_box"] = box;
  }
  if (c.equilibrium_set) {
    j["equilibrium_set"] = {{"lo", bound_vec(c.equilibrium_set->lo)}, {"hi", bound_vec(c.equilibrium_set->hi)}};
  }
  j["dt"] = c.dt;
  j["horizon"] = c.horizon;
  j["seed"] = c.seed;
  j["on_infeasible"] = c.policy == InfeasiblePolicy::halt ? "halt" : "zero_clamp";
  j["control_hold"] = c.hold == ControlHold::zero_order ? "zero_order" : "per_stage";
  j["equilibrium"] = {{"v_eps", c.equilibrium.v_eps}, {"u_eps", c.equilibrium.u_eps}, {"dwell", c.equilibrium.dwell}};
  j["goal_tol"] = c.goal_tol;
  return j;
}

/// Reads a scenario document. A "scenario" key selects a built-in as the
/// base; every other key overrides it. Without one, the document is a full
/// inline definition. The result is validated.
inline ScenarioConfig scenario_from_json(const json& j) {
  using namespace io_detail;
  if (!j.is_object()) throw ConfigError("scenario document must be a JSON object");
  if (!j.contains("schema_version")) throw ConfigError("missing 'schema_version'");
  if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<int>() != kSchemaVersion) {
    throw ConfigError("unsupported schema_version (expected 1)");
  }
  static const std::vector<std::string> known = {
      "schema_version", "scenario", "name", "dim", "robot", "obstacles", "initial", "nominal", "gains",
      "smooth_min", "circulation", "velocity_limits", "input_box", "equilibrium_set", "dt", "horizon", "seed",
      "on_infeasible", "control_hold", "equilibrium", "goal_tol", "output"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) != known.end()) continue;
    throw ConfigError("unknown key '" + key + "'");
  }

  ScenarioConfig c;
  const bool based = j.contains("scenario");
  if (based) {
    c = builtin_scenario(str(j.at("scenario"), "scenario"));
  } else {
    for (const char* k : {"dim", "robot", "initial", "nominal"}) field(j, k, "scenario");
  }
  if (j.contains("name")) c.name = str(j.at("name"), "name");
  if (j.contains("dim")) {
    if (!j.at("dim").is_number_integer()) throw ConfigError("dim: expected 2 or 3");
    c.dim = j.at("dim").get<int>();
    if (c.dim != 2 && c.dim != 3) throw ConfigError("dim: expected 2 or 3");
  }
  if (j.contains("robot")) {
    const json& r = j.at("robot");
    c.robot = primitive_from_json(field(r, "shape", "robot"), "robot.shape");
    c.robot_orientation = r.contains("orientation") ? to_vec(r.at("orientation"), "robot.orientation")
                          : c.dim == 2                ? Eigen::VectorXd::Zero(1)
                                                      : Eigen::VectorXd(Eigen::Vector4d(0, 0, 0, 1));
  }
  if (j.contains("obstacles")) {
    const json& obs = j.at("obstacles");
    if (!obs.is_array()) throw ConfigError("obstacles: expected an array");
    c.obstacles.clear();
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const std::string w = "obstacles[" + std::to_string(i) + "]";
      const std::string name =
          obs[i].contains("name") ? str(obs[i].at("name"), w + ".name") : "obstacle_" + std::to_string(i + 1);
      const ScalingPrimitive shape = primitive_from_json(field(obs[i], "shape", w), w + ".shape");
      if (shape.dim() != c.dim) throw ConfigError(w + ": wrong dimension");
      c.obstacles.push_back({name, Body{shape, frame_from_json(obs[i].value("frame", json::object()), c.dim, w + ".frame")}});
    }
  }
  if (j.contains("initial")) {
    const json& s = j.at("initial");
    c.p0 = to_vec(field(s, "position", "initial"), "initial.position");
    c.v0 = s.contains("velocity") ? to_vec(s.at("velocity"), "initial.velocity") : Eigen::VectorXd::Zero(c.p0.size());
  }
  if (j.contains("nominal")) {
    const json& n = j.at("nominal");
    const std::string kind = str(field(n, "kind", "nominal"), "nominal.kind");
    if (kind == "goal_pd") {
      c.nominal.kind = NominalKind::goal_pd;
      c.nominal.goal = to_vec(field(n, "goal", "nominal"), "nominal.goal");
      c.nominal.reference.reset();
    } else if (kind == "trajectory_pd") {
      c.nominal.kind = NominalKind::trajectory_pd;
      c.nominal.reference = reference_from_json(field(n, "reference", "nominal"), "nominal.reference");
    } else {
      throw ConfigError("nominal.kind: expected goal_pd or trajectory_pd");
    }
    if (n.contains("kp")) c.nominal.kp = num(n.at("kp"), "nominal.kp");
    if (n.contains("kd")) c.nominal.kd = num(n.at("kd"), "nominal.kd");
  }
  if (j.contains("gains")) {
    const json& g = j.at("gains");
    if (g.contains("alpha0")) c.gains.alpha0 = num(g.at("alpha0"), "gains.alpha0");
    if (g.contains("gamma1")) c.gains.gamma1 = num(g.at("gamma1"), "gains.gamma1");
    if (g.contains("gamma2")) c.gains.gamma2 = num(g.at("gamma2"), "gains.gamma2");
  }
  if (j.contains("smooth_min")) {
    const json& s = j.at("smooth_min");
    if (s.contains("enabled")) c.smooth_min = boolean(s.at("enabled"), "smooth_min.enabled");
    if (s.contains("eta")) c.eta = num(s.at("eta"), "smooth_min.eta");
    if (s.contains("phi0")) c.phi0 = num(s.at("phi0"), "smooth_min.phi0");
  }
  if (j.contains("circulation")) {
    const json& s = j.at("circulation");
    if (s.contains("enabled")) c.circulation = boolean(s.at("enabled"), "circulation.enabled");
    if (s.contains("matrix")) c.circulation_matrix = to_mat(s.at("matrix"), "circulation.matrix");
    if (s.contains("soft_weight")) c.circulation_soft_weight = num(s.at("soft_weight"), "circulation.soft_weight");
    if (s.contains("d")) {
      const json& d = s.at("d");
      const std::string kind = str(field(d, "kind", "circulation.d"), "circulation.d.kind");
      auto par = [&](const char* k) { return num(field(d, k, "circulation.d"), std::string("circulation.d.") + k); };
      if (kind == "linear") c.d = DFunction::linear(par("d1"), par("d2"));
      else if (kind == "exponential") c.d = DFunction::exponential(par("d1"), par("d2"), par("d3"), par("d4"), par("d5"));
      else throw ConfigError("circulation.d.kind: expected linear or exponential");
    }
  }
  if (j.contains("velocity_limits")) {
    const json& v = j.at("velocity_limits");
    if (v.is_null()) {
      c.velocity_limits.reset();
    } else {
      VelocityLimits l;
      l.lo = to_vec(field(v, "lo", "velocity_limits"), "velocity_limits.lo", true);
      l.hi = to_vec(field(v, "hi", "velocity_limits"), "velocity_limits.hi", true);
      if (v.contains("gamma_l")) l.gamma_l = num(v.at("gamma_l"), "velocity_limits.gamma_l");
      if (v.contains("gamma_u")) l.gamma_u = num(v.at("gamma_u"), "velocity_limits.gamma_u");
      c.velocity_limits = l;
    }
  }
  if (j.contains("input_box")) {
    const json& b = j.at("input_box");
    c.u_lo = b.contains("lo") ? to_vec(b.at("lo"), "input_box.lo", true) : Eigen::VectorXd();
    c.u_hi = b.contains("hi") ? to_vec(b.at("hi"), "input_box.hi", true) : Eigen::VectorXd();
  }
  if (j.contains("equilibrium_set")) {
    const json& b = j.at("equilibrium_set");
    c.equilibrium_set = EquilibriumSet{to_vec(field(b, "lo", "equilibrium_set"), "equilibrium_set.lo", true),
                                       to_vec(field(b, "hi", "equilibrium_set"), "equilibrium_set.hi", true)};
  }
  if (j.contains("dt")) c.dt = num(j.at("dt"), "dt");
  if (j.contains("horizon")) c.horizon = num(j.at("horizon"), "horizon");
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed: expected a nonnegative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("on_infeasible")) {
    const std::string p = str(j.at("on_infeasible"), "on_infeasible");
    if (p == "halt") c.policy = InfeasiblePolicy::halt;
    else if (p == "zero_clamp") c.policy = InfeasiblePolicy::zero_clamp;
    else throw ConfigError("on_infeasible: expected halt or zero_clamp");
  }
  if (j.contains("control_hold")) {
    const std::string p = str(j.at("control_hold"), "control_hold");
    if (p == "zero_order") c.hold = ControlHold::zero_order;
    else if (p == "per_stage") c.hold = ControlHold::per_stage;
    else throw ConfigError("control_hold: expected zero_order or per_stage");
  }
  if (j.contains("equilibrium")) {
    const json& e = j.at("equilibrium");
    if (e.contains("v_eps")) c.equilibrium.v_eps = num(e.at("v_eps"), "equilibrium.v_eps");
    if (e.contains("u_eps")) c.equilibrium.u_eps = num(e.at("u_eps"), "equilibrium.u_eps");
    if (e.contains("dwell")) c.equilibrium.dwell = num(e.at("dwell"), "equilibrium.dwell");
  }
  if (j.contains("goal_tol")) c.goal_tol = num(j.at("goal_tol"), "goal_tol");
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline ScenarioConfig load_scenario(const std::string& path) {
  try {
    return scenario_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed scenario: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Summary

inline json to_json(const EquilibriumReport& r) {
  json j = {{"detected", r.detected}};
  if (!r.detected) return j;
  j["window"] = {r.t0, r.t1};
  j["mean_position"] = io_detail::vec(r.mean_cfg);
  j["mean_velocity"] = io_detail::vec(r.mean_vel);
  j["h_min"] = r.h_min;
  j["case"] = r.equilibrium_case == 1 ? "i" : "ii";
  j["on_boundary"] = r.on_boundary;
  return j;
}

inline json to_json(const RunSummary& s) {
  json j = {{"goal_reached", s.goal_reached},
            {"final_goal_distance", s.final_goal_distance},
            {"equilibrium", to_json(s.equilibrium)},
            {"min_h", std::isfinite(s.min_h) ? json(s.min_h) : json(nullptr)},
            {"qp_time_us", {{"p50", s.qp_time_p50_us}, {"p90", s.qp_time_p90_us}}},
            {"steps", s.steps},
            {"halted", s.halted},
            {"all_optimal", s.all_optimal},
            {"violation", s.violation},
            {"max_speed", s.max_speed}};
  j["diagnostics"] = s.diagnostics;
  return j;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("bad number '" + s + "' in log");
  return v;
}

inline std::vector<std::string> log_columns(int dim, std::size_t barriers) {
  static const char* axes = "xyz";
  std::vector<std::string> cols = {"t"};
  for (const char* pre : {"p_", "v_", "u_nominal_", "u_filtered_"}) {
    for (int i = 0; i < dim; ++i) cols.push_back(std::string(pre) + axes[i]);
  }
  for (std::size_t k = 0; k < barriers; ++k) cols.push_back("h_" + std::to_string(k + 1));
  for (const char* c : {"phi", "qp_status", "qp_time_us"}) cols.push_back(c);
  return cols;
}

inline void write_log_csv(std::ostream& out, const TrajectoryLog& log) {
  const std::vector<std::string> cols = log_columns(log.dim, log.barrier_names.size());
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const LogRecord& r : log.records) {
    out << format_double(r.t);
    for (const Eigen::VectorXd* v : {&r.cfg, &r.vel, &r.u_nominal, &r.u_filtered}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) out << ',' << format_double((*v)(i));
    }
    for (double h : r.h) out << ',' << format_double(h);
    out << ',' << format_double(r.phi) << ',' << to_string(r.qp_status) << ',' << format_double(r.qp_time_us) << '\n';
  }
}

/// Column-major table read back from a log CSV.
struct CsvTable {
  std::vector<std::string> header;
  std::map<std::string, std::vector<double>> columns;
  std::size_t rows = 0;

  bool has(const std::string& c) const { return columns.count(c) > 0; }
  const std::vector<double>& at(const std::string& c) const {
    const auto it = columns.find(c);
    if (it == columns.end()) throw ConfigError("log is missing column '" + c + "'");
    return it->second;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_log_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.empty()) return t;
  if (line.back() == '\r') line.pop_back();
  t.header = split_csv_line(line);
  for (const std::string& c : t.header) t.columns[c];
  for (const char* c : {"t", "p_x", "p_y"}) {
    if (!t.has(c)) throw ConfigError(std::string("log is missing column '") + c + "'");
  }
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != t.header.size()) throw ConfigError("log row " + std::to_string(t.rows + 2) + " has the wrong width");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      t.columns[t.header[i]].push_back(t.header[i] == "qp_status" ? (cells[i] == "optimal" ? 0.0 : 1.0)
                                                                   : parse_double(cells[i]));
    }
    ++t.rows;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Plot series

inline constexpr int kOutlinePoints = 256;

/// Boundary point of {F <= 1} along a ray from an interior point, by
/// bracketing and bisection to machine precision.
inline Eigen::VectorXd ray_boundary(const Body& body, const Eigen::VectorXd& inside, const Eigen::VectorXd& dir) {
  auto F = [&](double r) { return scaling_value(body.shape, body.frame, inside + r * dir); };
  if (!(F(0.0) < 1.0)) throw InvalidArgument("ray origin must be interior");
  double lo = 0.0, hi = 1.0;
  int grow = 0;
  while (F(hi) < 1.0) {
    lo = hi;
    hi *= 2.0;
    if (++grow > 200) throw InvalidArgument("ray does not leave the set");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (F(mid) < 1.0 ? lo : hi) = mid;
  }
  return inside + 0.5 * (lo + hi) * dir;
}

inline Eigen::VectorXd interior_point(const Body& body) {
  if (const Ellipsoid* e = body.shape.as_ellipsoid()) return body.frame.to_world(e->mu);
  if (const SmoothPolytope* p = body.shape.as_polytope()) return body.frame.to_world(p->center);
  throw InvalidArgument("halfspaces have no bounded outline");
}

/// 256 points on the F = 1 level set in the xy plane through the body's
/// interior point (a cross-section for 3D bodies). A halfspace is drawn as
/// a segment of its boundary line of length `span` centred at the foot of
/// `focus`.
inline std::vector<Eigen::Vector2d> outline(const Body& body, const Eigen::Vector2d& focus = Eigen::Vector2d::Zero(),
                                            double span = 10.0) {
  std::vector<Eigen::Vector2d> pts;
  const int n = body.shape.dim();
  if (const Halfspace* h = body.shape.as_halfspace()) {
    const Eigen::MatrixXd R = body.frame.rotation();
    const Eigen::VectorXd a = R * h->a;
    const double b = h->b - a.dot(body.frame.origin());  // world: a'q + b <= 1
    const Eigen::Vector2d a2 = a.head<2>();
    if (a2.norm() == 0.0) return pts;
    const Eigen::Vector2d foot = focus - (a2.dot(focus) + b - 1.0) / a2.squaredNorm() * a2;
    const Eigen::Vector2d tan(-a2(1) / a2.norm(), a2(0) / a2.norm());
    for (int k = 0; k < kOutlinePoints; ++k) {
      pts.push_back(foot + span * (static_cast<double>(k) / (kOutlinePoints - 1) - 0.5) * tan);
    }
    return pts;
  }
  const Eigen::VectorXd c = interior_point(body);
  for (int k = 0; k < kOutlinePoints; ++k) {
    const double t = 2.0 * std::numbers::pi * k / kOutlinePoints;
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    d(0) = std::cos(t);
    d(1) = std::sin(t);
    pts.push_back(ray_boundary(body, c, d).head<2>());
  }
  return pts;
}

struct PlotFiles {
  std::string trajectory, outlines, barriers;
};

/// Plot-ready CSV blocks from a log and its scenario: the trajectory
/// polyline, obstacle outlines and the robot at the first and last pose,
/// and h/phi against time. An empty log gives header-only blocks.
inline PlotFiles plot_series(const CsvTable& log, const ScenarioConfig& cfg) {
  std::ostringstream traj, outl, bars;
  traj << "t,x,y\n";
  outl << "body,index,x,y\n";
  bars << "t";
  std::vector<std::string> hcols;
  for (const std::string& c : log.header) {
    if (c.rfind("h_", 0) == 0 || c == "phi") hcols.push_back(c);
  }
  for (const std::string& c : hcols) bars << ',' << c;
  bars << '\n';
  if (log.rows == 0) return {traj.str(), outl.str(), bars.str()};

  const auto& t = log.at("t");
  const auto& px = log.at("p_x");
  const auto& py = log.at("p_y");
  Eigen::Vector2d lo(px[0], py[0]), hi = lo;
  for (std::size_t k = 0; k < log.rows; ++k) {
    traj << format_double(t[k]) << ',' << format_double(px[k]) << ',' << format_double(py[k]) << '\n';
    lo = lo.cwiseMin(Eigen::Vector2d(px[k], py[k]));
    hi = hi.cwiseMax(Eigen::Vector2d(px[k], py[k]));
    bars << format_double(t[k]);
    for (const std::string& c : hcols) bars << ',' << format_double(log.at(c)[k]);
    bars << '\n';
  }
  const Eigen::Vector2d focus = 0.5 * (lo + hi);
  const double span = std::max(1.0, 2.0 * (hi - lo).norm());
  auto emit = [&](const std::string& name, const Body& b) {
    const auto pts = outline(b, focus, span);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      outl << name << ',' << k << ',' << format_double(pts[k](0)) << ',' << format_double(pts[k](1)) << '\n';
    }
  };
  for (const Obstacle& o : cfg.obstacles) emit(o.name, o.body);
  auto pose = [&](std::size_t k) {
    Eigen::VectorXd p(cfg.dim);
    p(0) = px[k];
    p(1) = py[k];
    if (cfg.dim == 3) p(2) = log.has("p_z") ? log.at("p_z")[k] : 0.0;
    return p;
  };
  emit("robot_start", cfg.robot_body(pose(0)));
  emit("robot_end", cfg.robot_body(pose(log.rows - 1)));
  return {traj.str(), outl.str(), bars.str()};
}

}  // namespace scalecbf
