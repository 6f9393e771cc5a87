#pragma once

// World-frame scaling functions F(p, theta) = F_body(R(theta)' (p - o(theta)))
// with derivatives up to third order in the stacked variable z = [p; theta].

#include <Eigen/Dense>

#include <vector>

#include "scalecbf/errors.hpp"
#include "scalecbf/frame.hpp"
#include "scalecbf/primitives.hpp"

namespace scalecbf {

inline constexpr double kGradTol = 1e-12;

/// Value and partial derivatives of a world-frame scaling function.
///
/// Derivatives are stored over z = [p; theta] (length n_p + n_theta); the
/// named accessors return the blocks. Blocks above `order` are empty.
struct ScalingJet {
  int order = 0;
  int n_p = 0;
  int n_theta = 0;
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  std::vector<double> third;

  int nz() const { return n_p + n_theta; }

  Eigen::VectorXd dFdp() const { return grad.head(n_p); }
  Eigen::VectorXd dFdtheta() const { return grad.tail(n_theta); }
  Eigen::MatrixXd d2Fdp2() const { return hess.topLeftCorner(n_p, n_p); }
  /// n_theta x n_p
  Eigen::MatrixXd d2Fdthetadp() const { return hess.bottomLeftCorner(n_theta, n_p); }
  Eigen::MatrixXd d2Fdtheta2() const { return hess.bottomRightCorner(n_theta, n_theta); }

  /// Third derivative over z indices.
  double d3(int a, int b, int c) const { return third[(a * nz() + b) * nz() + c]; }
};

/// Evaluates the world-frame scaling function of `prim` placed at `frame`.
inline ScalingJet eval_scaling(const ScalingPrimitive& prim, const Frame& frame,
                               const Eigen::VectorXd& p, int order) {
  if (order < 0 || order > 3) throw InvalidArgument("jet order must be in 0..3");
  if (frame.dim() != prim.dim() || p.size() != prim.dim()) {
    throw InvalidArgument("dimension mismatch between primitive, frame and point");
  }
  const int np = prim.dim();
  const int nr = frame.orientation_size();
  const int nt = frame.theta_size();
  const int nz = np + nt;
  const int r0 = np + np;  // first orientation index in z

  const RotationJet rj = rotation_jet(frame, order);
  const Eigen::VectorXd d = p - frame.origin();
  const Eigen::VectorXd q = rj.R.transpose() * d;
  const BodyJet bj = prim.body_jet(q, order);

  ScalingJet jet;
  jet.order = order;
  jet.n_p = np;
  jet.n_theta = nt;
  jet.value = bj.value;
  if (order < 1) return jet;

  // dq/dz
  Eigen::MatrixXd Q1 = Eigen::MatrixXd::Zero(np, nz);
  Q1.block(0, 0, np, np) = rj.R.transpose();
  Q1.block(0, np, np, np) = -rj.R.transpose();
  for (int k = 0; k < nr; ++k) Q1.col(r0 + k) = rj.d1[k].transpose() * d;
  jet.grad = Q1.transpose() * bj.grad;
  if (order < 2) return jet;

  // d2q/dz2, stored as Q2[(a * nz + b) * np + i]
  std::vector<double> Q2(static_cast<std::size_t>(nz * nz * np), 0.0);
  auto q2 = [&](int a, int b) { return &Q2[(a * nz + b) * np]; };
  for (int k = 0; k < nr; ++k) {
    const Eigen::MatrixXd D1t = rj.d1[k].transpose();
    for (int j = 0; j < np; ++j) {
      for (int i = 0; i < np; ++i) {
        // d2q_i / dp_j dr_k = (dR/dr_k)'(i, j);  o enters with a minus sign
        q2(j, r0 + k)[i] = q2(r0 + k, j)[i] = D1t(i, j);
        q2(np + j, r0 + k)[i] = q2(r0 + k, np + j)[i] = -D1t(i, j);
      }
    }
    for (int l = 0; l < nr; ++l) {
      const Eigen::VectorXd v = rj.d2[k * nr + l].transpose() * d;
      for (int i = 0; i < np; ++i) q2(r0 + k, r0 + l)[i] = v(i);
    }
  }
  jet.hess = Q1.transpose() * bj.hess * Q1;
  for (int a = 0; a < nz; ++a)
    for (int b = 0; b < nz; ++b)
      for (int i = 0; i < np; ++i) jet.hess(a, b) += bj.grad(i) * q2(a, b)[i];
  if (order < 3) return jet;

  // d3q/dz3 is nonzero only with at least two orientation indices.
  std::vector<double> Q3(static_cast<std::size_t>(nz * nz * nz * np), 0.0);
  auto q3 = [&](int a, int b, int c) { return &Q3[((a * nz + b) * nz + c) * np]; };
  auto set3 = [&](int a, int b, int c, int i, double val) {
    q3(a, b, c)[i] = q3(a, c, b)[i] = q3(b, a, c)[i] = val;
    q3(b, c, a)[i] = q3(c, a, b)[i] = q3(c, b, a)[i] = val;
  };
  for (int k = 0; k < nr; ++k) {
    for (int l = 0; l < nr; ++l) {
      const Eigen::MatrixXd D2t = rj.d2[k * nr + l].transpose();
      for (int j = 0; j < np; ++j) {
        for (int i = 0; i < np; ++i) {
          set3(j, r0 + k, r0 + l, i, D2t(i, j));
          set3(np + j, r0 + k, r0 + l, i, -D2t(i, j));
        }
      }
      for (int m = 0; m < nr; ++m) {
        const Eigen::VectorXd v = rj.d3[(k * nr + l) * nr + m].transpose() * d;
        for (int i = 0; i < np; ++i) set3(r0 + k, r0 + l, r0 + m, i, v(i));
      }
    }
  }

  // Body third derivative contracted with Q1 on each index.
  std::vector<double> T1;
  if (!bj.third_is_zero) {
    T1.assign(static_cast<std::size_t>(nz * nz * nz), 0.0);
    std::vector<double> tmp_a(static_cast<std::size_t>(nz * np * np), 0.0);
    for (int a = 0; a < nz; ++a)
      for (int j = 0; j < np; ++j)
        for (int k = 0; k < np; ++k) {
          double s = 0.0;
          for (int i = 0; i < np; ++i) s += bj.t(i, j, k) * Q1(i, a);
          tmp_a[(a * np + j) * np + k] = s;
        }
    std::vector<double> tmp_ab(static_cast<std::size_t>(nz * nz * np), 0.0);
    for (int a = 0; a < nz; ++a)
      for (int b = 0; b < nz; ++b)
        for (int k = 0; k < np; ++k) {
          double s = 0.0;
          for (int j = 0; j < np; ++j) s += tmp_a[(a * np + j) * np + k] * Q1(j, b);
          tmp_ab[(a * nz + b) * np + k] = s;
        }
    for (int a = 0; a < nz; ++a)
      for (int b = 0; b < nz; ++b)
        for (int c = 0; c < nz; ++c) {
          double s = 0.0;
          for (int k = 0; k < np; ++k) s += tmp_ab[(a * nz + b) * np + k] * Q1(k, c);
          T1[(a * nz + b) * nz + c] = s;
        }
  }

  // H_body Q1 for the mixed term.
  const Eigen::MatrixXd HQ1 = bj.hess * Q1;  // np x nz
  jet.third.assign(static_cast<std::size_t>(nz * nz * nz), 0.0);
  for (int a = 0; a < nz; ++a) {
    for (int b = a; b < nz; ++b) {
      for (int c = b; c < nz; ++c) {
        double s = T1.empty() ? 0.0 : T1[(a * nz + b) * nz + c];
        const double* ab = q2(a, b);
        const double* ac = q2(a, c);
        const double* bc = q2(b, c);
        const double* abc = q3(a, b, c);
        for (int i = 0; i < np; ++i) {
          s += ab[i] * HQ1(i, c) + ac[i] * HQ1(i, b) + bc[i] * HQ1(i, a);
          s += bj.grad(i) * abc[i];
        }
        const int idx[6] = {(a * nz + b) * nz + c, (a * nz + c) * nz + b,
                            (b * nz + a) * nz + c, (b * nz + c) * nz + a,
                            (c * nz + a) * nz + b, (c * nz + b) * nz + a};
        for (int id : idx) jet.third[id] = s;
      }
    }
  }
  return jet;
}

inline double scaling_value(const ScalingPrimitive& prim, const Frame& frame,
                            const Eigen::VectorXd& p) {
  return eval_scaling(prim, frame, p, 0).value;
}

/// Runtime check of the nonvanishing-gradient property outside the set.
/// Meaningful when F(p) > 1; returns whether |dF/dp| exceeds kGradTol.
inline bool gradient_nonzero_outside(const ScalingPrimitive& prim, const Frame& frame,
                                     const Eigen::VectorXd& p) {
  return eval_scaling(prim, frame, p, 1).dFdp().norm() > kGradTol;
}

}  // namespace scalecbf
