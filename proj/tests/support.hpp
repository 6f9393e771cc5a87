#pragma once

// Shared helpers for the test suites: seeded sampling and independent
// numerical oracles. Nothing here calls into the library's solvers.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace testsupport {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen); }

  VectorXd uniform_vec(Eigen::Index n, double lo, double hi) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = uniform(lo, hi);
    return v;
  }

  VectorXd unit_vec(Eigen::Index n) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v.normalized();
  }

  /// SPD matrix with eigenvalues in [lo, hi].
  MatrixXd spd(Eigen::Index n, double lo, double hi) {
    MatrixXd G(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) G(i, j) = normal();
    Eigen::HouseholderQR<MatrixXd> qr(G);
    const MatrixXd U = qr.householderQ();
    VectorXd ev = uniform_vec(n, lo, hi);
    return U * ev.asDiagonal() * U.transpose();
  }
};

/// Central difference of a scalar function.
inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                            double h = 1e-6) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

/// Central difference of a vector function; column i is d f / d x_i.
inline MatrixXd fd_jacobian(const std::function<VectorXd(const VectorXd&)>& f, const VectorXd& x,
                            double h = 1e-6) {
  const VectorXd f0 = f(x);
  MatrixXd J(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    J.col(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return J;
}

/// max |a - b| / max(1, max |b|), the relative error used throughout.
inline double rel_err(const MatrixXd& a, const MatrixXd& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace testsupport
