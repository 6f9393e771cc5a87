#pragma once

// Small dense strictly convex QP
//
//   min 0.5 u'Hu + f'u   s.t.  G u >= g,  lb <= u <= ub
//
// solved by a dual active-set method (Goldfarb-Idnani): start from the
// unconstrained minimiser and add the most violated row until none is
// left, dropping rows whose multipliers would turn negative. Each
// iteration re-factors the small reduced system from scratch.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "scalecbf/errors.hpp"

namespace scalecbf {

inline constexpr int kMaxQpRows = 64;

struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd G;  // rows x n
  Eigen::VectorXd g;
  Eigen::VectorXd lb;  // empty or size n, -inf allowed
  Eigen::VectorXd ub;

  int n() const { return static_cast<int>(H.rows()); }
  int rows() const { return static_cast<int>(G.rows()); }
};

enum class QpStatus { optimal, infeasible, iteration_limit };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::iteration_limit: return "iteration_limit";
  }
  return "unknown";
}

struct QpSolution {
  QpStatus status = QpStatus::optimal;
  Eigen::VectorXd u;
  /// Active constraint indices: 0..rows-1 are rows of G, rows + 2i is
  /// the lower bound of u_i and rows + 2i + 1 its upper bound.
  std::vector<int> active;
  Eigen::VectorXd duals;      // one per general row, then (lower, upper) per variable
  double primal_residual = 0.0;
  double stationarity = 0.0;
  double complementarity = 0.0;
  double farkas_residual = 0.0;  // only meaningful when infeasible
  double objective = 0.0;
  int iterations = 0;
};

namespace detail {

/// All inequality rows in one matrix, bounds appended as +-e_i rows.
struct StackedRows {
  Eigen::MatrixXd N;  // n x m, columns are normals
  Eigen::VectorXd b;  // N' u >= b
  std::vector<int> id;  // index in the QpSolution numbering
};

inline StackedRows stack_rows(const QpProblem& p) {
  const int n = p.n(), r = p.rows();
  std::vector<Eigen::VectorXd> cols;
  std::vector<double> rhs;
  StackedRows s;
  for (int i = 0; i < r; ++i) {
    cols.push_back(p.G.row(i).transpose());
    rhs.push_back(p.g(i));
    s.id.push_back(i);
  }
  for (int i = 0; i < n; ++i) {
    if (p.lb.size() && std::isfinite(p.lb(i))) {
      cols.push_back(Eigen::VectorXd::Unit(n, i));
      rhs.push_back(p.lb(i));
      s.id.push_back(r + 2 * i);
    }
    if (p.ub.size() && std::isfinite(p.ub(i))) {
      cols.push_back(-Eigen::VectorXd::Unit(n, i));
      rhs.push_back(-p.ub(i));
      s.id.push_back(r + 2 * i + 1);
    }
  }
  s.N.resize(n, static_cast<Eigen::Index>(cols.size()));
  s.b.resize(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    s.N.col(static_cast<Eigen::Index>(k)) = cols[k];
    s.b(static_cast<Eigen::Index>(k)) = rhs[k];
  }
  return s;
}

}  // namespace detail

inline void validate(const QpProblem& p) {
  const int n = p.n();
  if (n == 0 || p.H.cols() != n || p.f.size() != n) throw InvalidArgument("QP objective sizes disagree");
  if (p.G.rows() != p.g.size() || (p.G.rows() > 0 && p.G.cols() != n)) {
    throw InvalidArgument("QP row sizes disagree");
  }
  if (p.rows() > kMaxQpRows) throw InvalidArgument("QP has more than 64 rows");
  if ((p.lb.size() && p.lb.size() != n) || (p.ub.size() && p.ub.size() != n)) {
    throw InvalidArgument("QP bound sizes disagree");
  }
  if (!p.H.allFinite() || !p.f.allFinite() || !p.G.allFinite() || !p.g.allFinite()) {
    throw InvalidArgument("QP data must be finite");
  }
  if ((p.H - p.H.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + p.H.cwiseAbs().maxCoeff())) {
    throw InvalidArgument("QP Hessian must be symmetric");
  }
  if (p.lb.size() && p.ub.size() && (p.lb.array() > p.ub.array()).any()) {
    throw InvalidArgument("QP bounds are empty");
  }
}

/// KKT residuals of a candidate (u, duals) in the QpSolution numbering.
inline void certify(const QpProblem& p, QpSolution& s) {
  const int n = p.n(), r = p.rows();
  Eigen::VectorXd grad = p.H * s.u + p.f;
  double prim = 0.0, comp = 0.0;
  for (int i = 0; i < r; ++i) {
    const double slack = p.G.row(i).dot(s.u) - p.g(i);
    prim = std::max(prim, -slack);
    comp = std::max(comp, std::abs(s.duals(i) * slack));
    grad -= s.duals(i) * p.G.row(i).transpose();
  }
  for (int i = 0; i < n; ++i) {
    if (p.lb.size() && std::isfinite(p.lb(i))) {
      const double slack = s.u(i) - p.lb(i);
      prim = std::max(prim, -slack);
      comp = std::max(comp, std::abs(s.duals(r + 2 * i) * slack));
    }
    if (p.ub.size() && std::isfinite(p.ub(i))) {
      const double slack = p.ub(i) - s.u(i);
      prim = std::max(prim, -slack);
      comp = std::max(comp, std::abs(s.duals(r + 2 * i + 1) * slack));
    }
    grad(i) -= s.duals(r + 2 * i) - s.duals(r + 2 * i + 1);
  }
  s.primal_residual = prim;
  s.stationarity = grad.lpNorm<Eigen::Infinity>();
  s.complementarity = comp;
  s.objective = 0.5 * s.u.dot(p.H * s.u) + p.f.dot(s.u);
}

inline QpSolution solve_qp(const QpProblem& prob) {
  validate(prob);
  const int n = prob.n();
  const Eigen::LLT<Eigen::MatrixXd> llt(prob.H);
  if (llt.info() != Eigen::Success) throw InvalidArgument("QP Hessian must be positive definite");

  const detail::StackedRows S = detail::stack_rows(prob);
  const int m = static_cast<int>(S.b.size());
  Eigen::VectorXd colnorm(m);
  for (int k = 0; k < m; ++k) colnorm(k) = S.N.col(k).norm();

  QpSolution sol;
  sol.duals = Eigen::VectorXd::Zero(prob.rows() + 2 * n);
  Eigen::VectorXd x = -llt.solve(prob.f);
  std::vector<int> A;          // active columns of N
  std::vector<double> uA;      // their multipliers
  const int max_pivots = 10 * (n + m);
  int pivots = 0;

  auto feas_tol = [&](int k) { return 1e-11 * (1.0 + std::abs(S.b(k)) + colnorm(k) * x.lpNorm<Eigen::Infinity>()); };

  // Reduced solve for the step: z = H^-1 (n_p - N_A r),  N_A' z = 0.
  auto directions = [&](int p, Eigen::VectorXd& z, Eigen::VectorXd& r) {
    const Eigen::VectorXd hp = llt.solve(S.N.col(p));
    const int q = static_cast<int>(A.size());
    if (q == 0) {
      z = hp;
      r.resize(0);
      return;
    }
    Eigen::MatrixXd NA(n, q);
    for (int k = 0; k < q; ++k) NA.col(k) = S.N.col(A[k]);
    const Eigen::MatrixXd HNA = llt.solve(NA);
    const Eigen::MatrixXd Sred = NA.transpose() * HNA;
    r = Sred.ldlt().solve(NA.transpose() * hp);
    z = hp - HNA * r;
  };

  bool done = false;
  while (!done) {
    // Most violated row; normalised violation, lowest index on ties.
    int p = -1;
    double worst = 0.0;
    for (int k = 0; k < m; ++k) {
      if (std::find(A.begin(), A.end(), k) != A.end()) continue;
      const double s = S.N.col(k).dot(x) - S.b(k);
      if (s >= -feas_tol(k)) continue;
      const double v = colnorm(k) > 0.0 ? -s / colnorm(k) : std::numeric_limits<double>::infinity();
      if (v > worst) worst = v, p = k;
    }
    if (p < 0) break;

    double up = 0.0;  // multiplier of the entering row
    for (;;) {
      if (++pivots > max_pivots) {
        sol.status = QpStatus::iteration_limit;
        done = true;
        break;
      }
      Eigen::VectorXd z, r;
      directions(p, z, r);
      const double zn = z.norm();
      const bool dependent = zn <= 1e-12 * std::max(1.0, llt.solve(S.N.col(p)).norm());

      // Partial step: largest t keeping active multipliers nonnegative.
      double t1 = std::numeric_limits<double>::infinity();
      int drop = -1;
      for (int k = 0; k < static_cast<int>(A.size()); ++k) {
        if (r(k) > 1e-14 && uA[k] / r(k) < t1) t1 = uA[k] / r(k), drop = k;
      }
      const double slack = S.N.col(p).dot(x) - S.b(p);
      const double t2 = dependent ? std::numeric_limits<double>::infinity() : -slack / S.N.col(p).dot(z);

      if (!std::isfinite(t1) && !std::isfinite(t2)) {
        // n_p = N_A r with r <= 0: Farkas certificate y = [1; -r] >= 0.
        Eigen::VectorXd comb = S.N.col(p);
        for (int k = 0; k < static_cast<int>(A.size()); ++k) comb -= r(k) * S.N.col(A[k]);
        sol.farkas_residual = comb.lpNorm<Eigen::Infinity>();
        sol.status = QpStatus::infeasible;
        done = true;
        break;
      }
      const double t = std::min(t1, t2);
      if (!dependent) x += t * z;
      for (int k = 0; k < static_cast<int>(A.size()); ++k) uA[k] -= t * r(k);
      up += t;
      if (t2 <= t1) {
        A.push_back(p);
        uA.push_back(up);
        break;
      }
      A.erase(A.begin() + drop);
      uA.erase(uA.begin() + drop);
    }
  }

  sol.u = x;
  sol.iterations = pivots;
  for (std::size_t k = 0; k < A.size(); ++k) {
    sol.active.push_back(S.id[A[k]]);
    sol.duals(S.id[A[k]]) = std::max(0.0, uA[k]);
  }
  std::sort(sol.active.begin(), sol.active.end());
  certify(prob, sol);
  return sol;
}

}  // namespace scalecbf
