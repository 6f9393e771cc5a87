#pragma once

// Property sweeps behind `scalecbf check`: finite-difference checks of the
// alpha* sensitivities, closed form vs Newton, and forward invariance over
// random collision scenes. Each failing case is serialised so it can be
// replayed on its own.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "scalecbf/instances.hpp"
#include "scalecbf/io.hpp"
#include "scalecbf/scenarios.hpp"
#include "scalecbf/sensitivity.hpp"
#include "scalecbf/sim.hpp"

namespace scalecbf {

inline constexpr double kGradientTol = 1e-6;
inline constexpr double kHessianTol = 1e-4;
inline constexpr double kAsymmetryTol = 1e-9;
inline constexpr double kAlphaAgreementTol = 1e-8;
inline constexpr double kPointAgreementTol = 1e-7;
inline constexpr double kInvarianceTol = -1e-3;
inline constexpr double kFdStep = 1e-6;

struct CheckCase {
  std::string suite, metric;
  double error = 0.0;
  double threshold = 0.0;
  json input;

  bool failed() const { return !(error <= threshold); }
};

struct CheckReport {
  std::string suite;
  std::size_t cases = 0;
  std::vector<CheckCase> worst;     // per metric
  std::vector<CheckCase> failures;

  bool pass() const { return failures.empty(); }
};

inline const std::vector<std::string>& check_suites() {
  static const std::vector<std::string> s = {"gradients", "hessians", "closedform", "invariance"};
  return s;
}

namespace check_detail {

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

inline Eigen::VectorXd fd_gradient(const PrimitivePair& pair) {
  const Eigen::VectorXd th = pair.theta();
  Eigen::VectorXd g(th.size());
  for (Eigen::Index j = 0; j < th.size(); ++j) {
    Eigen::VectorXd tp = th, tm = th;
    tp(j) += kFdStep;
    tm(j) -= kFdStep;
    g(j) = (solve_min_scaling(pair.with_theta(tp)).alpha - solve_min_scaling(pair.with_theta(tm)).alpha) / (2 * kFdStep);
  }
  return g;
}

inline Eigen::MatrixXd fd_hessian(const PrimitivePair& pair) {
  const Eigen::VectorXd th = pair.theta();
  Eigen::MatrixXd H(th.size(), th.size());
  for (Eigen::Index j = 0; j < th.size(); ++j) {
    Eigen::VectorXd tp = th, tm = th;
    tp(j) += kFdStep;
    tm(j) -= kFdStep;
    H.col(j) = (compute_alpha(pair.with_theta(tp), 1).grad - compute_alpha(pair.with_theta(tm), 1).grad) / (2 * kFdStep);
  }
  return H;
}

inline json pair_json(const PrimitivePair& p) {
  return {{"A", {{"shape", to_json(p.A.shape)}, {"frame", to_json(p.A.frame)}}},
          {"B", {{"shape", to_json(p.B.shape)}, {"frame", to_json(p.B.frame)}}}};
}

inline PrimitivePair pair_from_json(const json& j) {
  auto body = [&](const char* k) {
    const json& b = io_detail::field(j, k, "pair");
    const ScalingPrimitive s = primitive_from_json(io_detail::field(b, "shape", k), std::string(k) + ".shape");
    return Body{s, frame_from_json(io_detail::field(b, "frame", k), s.dim(), std::string(k) + ".frame")};
  };
  try {
    return PrimitivePair(body("A"), body("B"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

inline std::vector<CheckCase> evaluate_pair(const std::string& suite, const PrimitivePair& pair) {
  const json in = {{"suite", suite}, {"kind", to_string(pair.kind())}, {"pair", pair_json(pair)}};
  std::vector<CheckCase> out;
  if (suite == "gradients") {
    const AlphaSensitivity d = compute_alpha(pair, 1);
    out.push_back({suite, "gradient_rel_err", rel_err(d.grad, fd_gradient(pair)), kGradientTol, in});
  } else if (suite == "hessians") {
    const AlphaSensitivity d = compute_alpha(pair, 2);
    out.push_back({suite, "hessian_rel_err", rel_err(d.hess, fd_hessian(pair)), kHessianTol, in});
    out.push_back({suite, "hessian_asymmetry", d.hess_asymmetry, kAsymmetryTol, in});
  } else if (suite == "closedform") {
    const MinScalingSolution c = solve_min_scaling(pair);
    const MinScalingSolution k = newton_kkt(pair);
    out.push_back({suite, "alpha_gap", std::abs(c.alpha - k.alpha), kAlphaAgreementTol, in});
    out.push_back({suite, "point_gap", (c.p - k.p).norm(), kPointAgreementTol, in});
  }
  return out;
}

inline std::vector<CheckCase> evaluate_scenario(const ScenarioConfig& cfg) {
  const RunResult r = run_scenario(cfg);
  const json in = {{"suite", "invariance"}, {"scenario", to_json(cfg)}};
  // Only rollouts with every QP optimal carry the guarantee.
  if (!r.summary.all_optimal) return {{"invariance", "skipped_infeasible", 0.0, 0.0, in}};
  return {{"invariance", "negative_min_h", std::max(0.0, -r.summary.min_h), -kInvarianceTol, in}};
}

inline void record(CheckReport& rep, const std::vector<CheckCase>& cases) {
  ++rep.cases;
  for (const CheckCase& c : cases) {
    auto it = std::find_if(rep.worst.begin(), rep.worst.end(), [&](const CheckCase& w) { return w.metric == c.metric; });
    if (it == rep.worst.end()) rep.worst.push_back(c);
    else if (c.error > it->error || std::isnan(c.error)) *it = c;
    if (c.failed()) rep.failures.push_back(c);
  }
}

}  // namespace check_detail

/// Runs one suite with `count` cases per (pair kind, dimension), or
/// `count` random scenes for the invariance suite.
inline CheckReport run_check(const std::string& suite, std::uint64_t seed, int count) {
  if (std::find(check_suites().begin(), check_suites().end(), suite) == check_suites().end()) {
    throw ConfigError("unknown check suite '" + suite + "'");
  }
  if (count < 1) throw ConfigError("count must be positive");
  CheckReport rep;
  rep.suite = suite;
  if (suite == "invariance") {
    for (int k = 0; k < count; ++k) {
      check_detail::record(rep, check_detail::evaluate_scenario(random_collision_scenario(seed + static_cast<std::uint64_t>(k))));
    }
    return rep;
  }
  std::vector<PairKind> kinds = {PairKind::ellipsoid_ellipsoid, PairKind::ellipsoid_halfspace, PairKind::ellipsoid_polytope};
  Sampler rng(seed);
  for (int n : {2, 3}) {
    for (PairKind kind : kinds) {
      if (suite == "closedform" && kind != PairKind::ellipsoid_ellipsoid) continue;
      for (int k = 0; k < count; ++k) {
        const PrimitivePair pair = rng.pair(kind, n);
        check_detail::record(rep, check_detail::evaluate_pair(suite, pair));
      }
    }
  }
  return rep;
}

/// Re-evaluates a serialised case.
inline std::vector<CheckCase> replay_case(const json& in) {
  const std::string suite = io_detail::str(io_detail::field(in, "suite", "case"), "case.suite");
  if (suite == "invariance") return check_detail::evaluate_scenario(scenario_from_json(io_detail::field(in, "scenario", "case")));
  if (suite == "gradients" || suite == "hessians" || suite == "closedform") {
    return check_detail::evaluate_pair(suite, check_detail::pair_from_json(io_detail::field(in, "pair", "case")));
  }
  throw ConfigError("unknown check suite '" + suite + "'");
}

inline json to_json(const CheckCase& c) {
  return {{"suite", c.suite}, {"metric", c.metric}, {"error", c.error}, {"threshold", c.threshold}, {"input", c.input}};
}

inline json to_json(const CheckReport& r) {
  json worst = json::array(), fails = json::array();
  for (const CheckCase& c : r.worst) worst.push_back(to_json(c));
  for (const CheckCase& c : r.failures) fails.push_back(to_json(c));
  return {{"suite", r.suite}, {"cases", r.cases}, {"pass", r.pass()}, {"worst", worst}, {"failures", fails}};
}

}  // namespace scalecbf
