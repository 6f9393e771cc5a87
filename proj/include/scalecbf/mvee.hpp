#pragma once

// Minimum-volume enclosing ellipsoid
//
//   min ln det D^-1   s.t.  |D p_i + d| <= 1,  D symmetric positive definite
//
// solved in the lifted dual with Khachiyan's multiplicative scheme plus
// Todd-Yildirim away steps, which converge linearly near the optimum.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "scalecbf/errors.hpp"

namespace scalecbf {

struct MveeResult {
  Eigen::MatrixXd D;
  Eigen::VectorXd d;
  Eigen::MatrixXd P;   // D^2
  Eigen::VectorXd mu;  // -D^-1 d
  double residual = 0.0;  // max_i |D p_i + d| - 1
  double gap = 0.0;       // final relative optimality gap
  int iterations = 0;
};

inline MveeResult mvee(const std::vector<Eigen::VectorXd>& points, double tol = 1e-10,
                       int max_iter = 200000) {
  if (points.empty()) throw DegenerateInput("mvee needs at least one point");
  const Eigen::Index n = points.front().size();
  const Eigen::Index m = static_cast<Eigen::Index>(points.size());
  if (m < n + 1) throw DegenerateInput("mvee needs at least dim + 1 points");
  if (!(tol > 0.0)) throw InvalidArgument("mvee tolerance must be positive");

  Eigen::MatrixXd pts(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    if (points[j].size() != n) throw InvalidArgument("mvee points differ in dimension");
    pts.col(j) = points[j];
  }
  Eigen::MatrixXd Q(n + 1, m);
  Q.topRows(n) = pts;
  Q.row(n).setOnes();

  // Centre and scale before the rank test so it is translation invariant.
  {
    const Eigen::VectorXd mean = pts.rowwise().mean();
    Eigen::MatrixXd centred = pts.colwise() - mean;
    const double scale = centred.cwiseAbs().maxCoeff();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred);
    if (!(scale > 0.0) || svd.singularValues()(n - 1) <= 1e-10 * svd.singularValues()(0)) {
      throw DegenerateInput("mvee points are affinely dependent");
    }
  }

  const double dn = static_cast<double>(n + 1);
  Eigen::VectorXd u = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  MveeResult res;
  Eigen::VectorXd g(m);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd X = Q * u.asDiagonal() * Q.transpose();
    const Eigen::LLT<Eigen::MatrixXd> llt(X);
    const Eigen::MatrixXd L = llt.matrixL().solve(Q);
    g = L.colwise().squaredNorm().transpose();

    Eigen::Index jp = 0, jm = -1;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (g(j) > g(jp)) jp = j;
      if (u(j) > 0.0 && (jm < 0 || g(j) < g(jm))) jm = j;
    }
    const double eps_plus = g(jp) / dn - 1.0;
    const double eps_minus = 1.0 - g(jm) / dn;
    res.gap = std::max(eps_plus, eps_minus);
    res.iterations = it;
    if (res.gap <= tol) break;

    if (eps_plus >= eps_minus) {
      const double beta = (g(jp) - dn) / (dn * (g(jp) - 1.0));
      u *= (1.0 - beta);
      u(jp) += beta;
    } else {
      double beta = (dn - g(jm)) / (dn * (g(jm) - 1.0));
      const double cap = u(jm) / (1.0 - u(jm));
      if (beta >= cap) {
        beta = cap;
        u *= (1.0 + beta);
        u(jm) = 0.0;
      } else {
        u *= (1.0 + beta);
        u(jm) -= beta;
      }
    }
  }

  const Eigen::VectorXd c = pts * u;
  const Eigen::MatrixXd S = pts * u.asDiagonal() * pts.transpose() - c * c.transpose();
  Eigen::MatrixXd A = S.inverse() / static_cast<double>(n);
  A = 0.5 * (A + A.transpose());

  // Rescale so every point is inside; the factor is 1 + O(gap).
  double worst = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    const Eigen::VectorXd r = pts.col(j) - c;
    worst = std::max(worst, r.dot(A * r));
  }
  A /= worst;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  res.P = A;
  res.mu = c;
  res.D = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() *
          es.eigenvectors().transpose();
  res.d = -res.D * c;
  double rmax = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) rmax = std::max(rmax, (res.D * pts.col(j) + res.d).norm());
  res.residual = rmax - 1.0;
  return res;
}

}  // namespace scalecbf
