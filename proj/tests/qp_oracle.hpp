#pragma once

// Log-barrier interior point reference for small dense QPs
//   min 0.5 x'Hx + f'x  s.t.  C x >= d
// started from a strictly feasible point supplied by the caller.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace qp_oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double objective(const MatrixXd& H, const VectorXd& f, const VectorXd& x) {
  return 0.5 * x.dot(H * x) + f.dot(x);
}

inline VectorXd barrier_solve(const MatrixXd& H, const VectorXd& f, const MatrixXd& C, const VectorXd& d,
                              VectorXd x, double gap = 1e-11) {
  if (((C * x - d).array() <= 0.0).any()) throw std::invalid_argument("start not strictly feasible");
  const double m = static_cast<double>(d.size());
  if (m == 0) return H.llt().solve(-f);
  auto phi = [&](double t, const VectorXd& y) {
    const VectorXd s = C * y - d;
    if ((s.array() <= 0.0).any()) return std::numeric_limits<double>::infinity();
    return t * objective(H, f, y) - s.array().log().sum();
  };
  for (double t = 1.0; m / t > gap; t *= 8.0) {
    for (int it = 0; it < 200; ++it) {
      const VectorXd s = C * x - d;
      const VectorXd inv = s.cwiseInverse();
      const VectorXd grad = t * (H * x + f) - C.transpose() * inv;
      const MatrixXd hess = t * H + C.transpose() * inv.cwiseAbs2().asDiagonal() * C;
      const VectorXd dx = -hess.ldlt().solve(grad);
      const double dec = -grad.dot(dx);
      if (dec < 1e-20) break;
      double step = 1.0;
      const double f0 = phi(t, x);
      while (phi(t, x + step * dx) > f0 - 0.25 * step * dec && step > 1e-16) step *= 0.5;
      if (step <= 1e-16) break;
      x += step * dx;
    }
  }
  return x;
}

}  // namespace qp_oracle
