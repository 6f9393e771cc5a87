#pragma once

// Seeded random instances for property sweeps: shapes, frames and disjoint
// pairs of every supported kind.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

#include "scalecbf/primitives.hpp"
#include "scalecbf/sensitivity.hpp"

namespace scalecbf {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }

  Eigen::VectorXd uniform_vec(int n, double lo, double hi) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = uniform(lo, hi);
    return v;
  }

  Eigen::VectorXd direction(int n) {
    Eigen::VectorXd v(n);
    do {
      for (int i = 0; i < n; ++i) v(i) = normal();
    } while (v.norm() < 1e-3);
    return v.normalized();
  }

  /// Symmetric positive definite with eigenvalues in [lo, hi].
  Eigen::MatrixXd spd(int n, double lo, double hi) {
    Eigen::MatrixXd G(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) G(i, j) = normal();
    const Eigen::MatrixXd U = Eigen::HouseholderQR<Eigen::MatrixXd>(G).householderQ();
    return U * uniform_vec(n, lo, hi).asDiagonal() * U.transpose();
  }

  Frame frame(int n, double spread) {
    if (n == 2) return Frame::planar(uniform_vec(2, -spread, spread), uniform(-std::numbers::pi, std::numbers::pi));
    const Eigen::Vector4d xi = direction(4);
    return Frame::spatial(uniform_vec(3, -spread, spread), xi);
  }

  ScalingPrimitive ellipsoid(int n) { return ScalingPrimitive::ellipsoid(spd(n, 0.4, 3.0), uniform_vec(n, -0.3, 0.3)); }

  /// A bounded polytope: jittered axis-aligned box rows plus a few random
  /// facets, all with offsets that keep the origin inside.
  ScalingPrimitive polytope(int n, double kappa_lo = 3.0, double kappa_hi = 20.0) {
    const int extra = integer(0, 3);
    Eigen::MatrixXd A(2 * n + extra, n);
    Eigen::VectorXd b(2 * n + extra);
    for (int i = 0; i < n; ++i) {
      for (int s = 0; s < 2; ++s) {
        Eigen::VectorXd a = Eigen::VectorXd::Unit(n, i) * (s ? -1.0 : 1.0) + 0.2 * uniform_vec(n, -1, 1);
        A.row(2 * i + s) = a.normalized().transpose();
        b(2 * i + s) = -uniform(0.5, 1.2);
      }
    }
    for (int k = 0; k < extra; ++k) {
      A.row(2 * n + k) = direction(n).transpose();
      b(2 * n + k) = -uniform(0.6, 1.2);
    }
    return ScalingPrimitive::polytope(A, b, uniform(kappa_lo, kappa_hi));
  }

  ScalingPrimitive halfspace(int n) { return ScalingPrimitive::halfspace(direction(n) * uniform(0.5, 2.0), uniform(-0.5, 0.5)); }

  ScalingPrimitive primitive(PrimitiveKind k, int n) {
    switch (k) {
      case PrimitiveKind::halfspace: return halfspace(n);
      case PrimitiveKind::polytope: return polytope(n);
      case PrimitiveKind::ellipsoid: return ellipsoid(n);
    }
    throw InvalidArgument("unknown primitive kind");
  }

  /// A pair of the given kind whose minimal scaling factor lies in
  /// [alpha_lo, alpha_hi] (rejection sampling on random placements).
  PrimitivePair pair(PairKind kind, int n, double alpha_lo = 1.2, double alpha_hi = 30.0) {
    PrimitiveKind ka = PrimitiveKind::ellipsoid, kb = PrimitiveKind::ellipsoid;
    switch (kind) {
      case PairKind::ellipsoid_ellipsoid: break;
      case PairKind::ellipsoid_halfspace: kb = PrimitiveKind::halfspace; break;
      case PairKind::halfspace_ellipsoid: ka = PrimitiveKind::halfspace; break;
      case PairKind::ellipsoid_polytope: kb = PrimitiveKind::polytope; break;
      case PairKind::polytope_ellipsoid: ka = PrimitiveKind::polytope; break;
    }
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const ScalingPrimitive a = primitive(ka, n);
      const ScalingPrimitive b = primitive(kb, n);
      const Frame fa = frame(n, 0.5);
      Frame fb = frame(n, 0.5);
      const Eigen::VectorXd shift = direction(n) * uniform(1.0, 5.0);
      Eigen::VectorXd th = fb.theta();
      th.head(n) += shift;
      fb = Frame::from_theta(n, th);
      PrimitivePair pr(Body{a, fa}, Body{b, fb});
      const double alpha = solve_min_scaling(pr).alpha;
      if (alpha >= alpha_lo && alpha <= alpha_hi) return pr;
    }
    throw DegenerateInput("could not sample a pair in the requested alpha range");
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace scalecbf
