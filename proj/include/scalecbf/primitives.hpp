#pragma once

// Body-frame scaling functions. Each primitive describes a closed convex set
// A = { q : F(q) <= 1 } with a smooth convex F:
//
//   halfspace   F(q) = a'q + b
//   polytope    F(q) = (1/kappa) ln( (1/N) sum_i exp(kappa (a_i'q + b_i)) ) + 1
//   ellipsoid   F(q) = (q - mu)' P (q - mu)
//
// The polytope form contains the exact polytope { a_i'q + b_i <= 0 } and
// converges to it as kappa grows.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "scalecbf/errors.hpp"

namespace scalecbf {

enum class PrimitiveKind { halfspace, polytope, ellipsoid };

inline const char* to_string(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::halfspace: return "halfspace";
    case PrimitiveKind::polytope: return "polytope";
    case PrimitiveKind::ellipsoid: return "ellipsoid";
  }
  return "unknown";
}

struct Halfspace {
  Eigen::VectorXd a;
  double b = 0.0;
};

struct SmoothPolytope {
  Eigen::MatrixXd A;  // rows a_i'
  Eigen::VectorXd b;
  double kappa = 1.0;
  Eigen::VectorXd center;  // minimiser of F, filled on construction
};

struct Ellipsoid {
  Eigen::MatrixXd P;
  Eigen::VectorXd mu;
};

/// Value and derivatives of a function of one n-vector, up to third order.
/// `third` is the dense n^3 tensor, row-major in (i, j, k).
struct BodyJet {
  int order = 0;
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  std::vector<double> third;
  bool third_is_zero = true;

  double t(int i, int j, int k) const {
    const auto n = grad.size();
    return third[(i * n + j) * n + k];
  }
};

namespace detail {

/// Stabilised log-sum-exp evaluation of a polytope scaling function.
inline BodyJet polytope_jet(const SmoothPolytope& poly, const Eigen::VectorXd& q,
                            int order) {
  const Eigen::Index N = poly.A.rows();
  const Eigen::Index n = poly.A.cols();
  const double kappa = poly.kappa;
  const Eigen::VectorXd s = poly.A * q + poly.b;
  const double c = s.maxCoeff();
  const Eigen::VectorXd z = (kappa * (s.array() - c)).exp().matrix();
  const double sum_z = z.sum();

  BodyJet jet;
  jet.order = order;
  jet.value = std::log(sum_z) / kappa + c - std::log(static_cast<double>(N)) / kappa + 1.0;
  if (order < 1) return jet;

  const Eigen::VectorXd w = z / sum_z;
  jet.grad = poly.A.transpose() * w;
  if (order < 2) return jet;

  jet.hess = kappa * (poly.A.transpose() * w.asDiagonal() * poly.A -
                      jet.grad * jet.grad.transpose());
  if (order < 3) return jet;

  // kappa^2 * sum_i w_i (a_i - g)^(x3)
  jet.third.assign(static_cast<std::size_t>(n * n * n), 0.0);
  jet.third_is_zero = false;
  for (Eigen::Index r = 0; r < N; ++r) {
    const Eigen::VectorXd d = poly.A.row(r).transpose() - jet.grad;
    const double wr = kappa * kappa * w(r);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index k = 0; k < n; ++k)
          jet.third[(i * n + j) * n + k] += wr * d(i) * d(j) * d(k);
  }
  return jet;
}

/// Damped Newton minimisation of a polytope scaling function. Throws when
/// the Hessian degenerates, which happens iff the polytope is unbounded.
inline Eigen::VectorXd polytope_minimizer(const SmoothPolytope& poly) {
  const Eigen::Index n = poly.A.cols();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
  for (int it = 0; it < 200; ++it) {
    const BodyJet jet = polytope_jet(poly, q, 2);
    if (jet.grad.lpNorm<Eigen::Infinity>() < 1e-13) return q;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jet.hess);
    if (es.eigenvalues().minCoeff() <= 1e-14 * std::max(1.0, es.eigenvalues().maxCoeff()) ||
        q.norm() > 1e8) {
      throw InvalidArgument("polytope rows do not describe a bounded set");
    }
    const Eigen::VectorXd step = -jet.hess.ldlt().solve(jet.grad);
    double t = 1.0;
    const double slope = jet.grad.dot(step);
    while (t > 1e-12) {
      const double trial = polytope_jet(poly, q + t * step, 0).value;
      if (trial <= jet.value + 1e-4 * t * slope) break;
      t *= 0.5;
    }
    q += t * step;
    if (t * step.norm() < 1e-15 * (1.0 + q.norm())) return q;
  }
  return q;
}

}  // namespace detail

/// A body-frame convex primitive with its scaling function.
class ScalingPrimitive {
 public:
  static ScalingPrimitive halfspace(const Eigen::VectorXd& a, double b) {
    check_dim(a.size());
    if (!a.allFinite() || a.norm() == 0.0) throw InvalidArgument("halfspace normal must be nonzero");
    return ScalingPrimitive(Halfspace{a, b});
  }

  static ScalingPrimitive polytope(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                   double kappa) {
    check_dim(A.cols());
    if (A.rows() != b.size()) throw InvalidArgument("polytope A and b disagree in row count");
    if (A.rows() < A.cols() + 1) {
      throw InvalidArgument("polytope needs at least dim + 1 rows");
    }
    if (!(kappa > 0.0) || !std::isfinite(kappa)) throw InvalidArgument("kappa must be positive");
    SmoothPolytope poly{A, b, kappa, {}};
    poly.center = detail::polytope_minimizer(poly);
    if (!((A * poly.center + b).maxCoeff() < 0.0) &&
        !(detail::polytope_jet(poly, poly.center, 0).value < 1.0)) {
      throw InvalidArgument("polytope has empty interior");
    }
    return ScalingPrimitive(std::move(poly));
  }

  static ScalingPrimitive ellipsoid(const Eigen::MatrixXd& P, const Eigen::VectorXd& mu) {
    check_dim(P.rows());
    if (P.cols() != P.rows() || mu.size() != P.rows()) {
      throw InvalidArgument("ellipsoid shape matrix and center disagree in size");
    }
    if (!P.allFinite() || (P - P.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + P.norm())) {
      throw InvalidArgument("ellipsoid shape matrix must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
    if (!(es.eigenvalues().minCoeff() > 0.0)) {
      throw InvalidArgument("ellipsoid shape matrix must be positive definite");
    }
    return ScalingPrimitive(Ellipsoid{0.5 * (P + P.transpose()), mu});
  }

  static ScalingPrimitive ball(const Eigen::VectorXd& center, double radius) {
    if (!(radius > 0.0)) throw InvalidArgument("radius must be positive");
    const auto n = center.size();
    return ellipsoid(Eigen::MatrixXd::Identity(n, n) / (radius * radius), center);
  }

  /// Axis-aligned ellipse/ellipsoid centered at the body origin.
  static ScalingPrimitive axis_ellipsoid(const Eigen::VectorXd& semi_axes) {
    Eigen::VectorXd inv = semi_axes.array().square().inverse().matrix();
    return ellipsoid(inv.asDiagonal().toDenseMatrix(), Eigen::VectorXd::Zero(semi_axes.size()));
  }

  /// Axis-aligned box |q_i| <= h_i as a smooth polytope.
  static ScalingPrimitive box(const Eigen::VectorXd& half_extents, double kappa) {
    const auto n = half_extents.size();
    Eigen::MatrixXd A(2 * n, n);
    Eigen::VectorXd b(2 * n);
    A.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      A(2 * i, i) = 1.0;
      A(2 * i + 1, i) = -1.0;
      b(2 * i) = -half_extents(i);
      b(2 * i + 1) = -half_extents(i);
    }
    return polytope(A, b, kappa);
  }

  PrimitiveKind kind() const {
    return static_cast<PrimitiveKind>(shape_.index());
  }

  int dim() const {
    return std::visit(
        [](const auto& s) -> int {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Halfspace>) return static_cast<int>(s.a.size());
          else if constexpr (std::is_same_v<T, SmoothPolytope>) return static_cast<int>(s.A.cols());
          else return static_cast<int>(s.mu.size());
        },
        shape_);
  }

  /// Positive definite Hessian everywhere.
  bool strongly_convex() const { return kind() == PrimitiveKind::ellipsoid; }

  const Halfspace* as_halfspace() const { return std::get_if<Halfspace>(&shape_); }
  const SmoothPolytope* as_polytope() const { return std::get_if<SmoothPolytope>(&shape_); }
  const Ellipsoid* as_ellipsoid() const { return std::get_if<Ellipsoid>(&shape_); }

  BodyJet body_jet(const Eigen::VectorXd& q, int order) const {
    if (q.size() != dim()) throw InvalidArgument("point dimension does not match primitive");
    return std::visit(
        [&](const auto& s) -> BodyJet {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Halfspace>) {
            BodyJet jet;
            jet.order = order;
            jet.value = s.a.dot(q) + s.b;
            if (order >= 1) jet.grad = s.a;
            if (order >= 2) jet.hess = Eigen::MatrixXd::Zero(q.size(), q.size());
            if (order >= 3) jet.third.assign(q.size() * q.size() * q.size(), 0.0);
            return jet;
          } else if constexpr (std::is_same_v<T, SmoothPolytope>) {
            return detail::polytope_jet(s, q, order);
          } else {
            BodyJet jet;
            jet.order = order;
            const Eigen::VectorXd d = q - s.mu;
            const Eigen::VectorXd Pd = s.P * d;
            jet.value = d.dot(Pd);
            if (order >= 1) jet.grad = 2.0 * Pd;
            if (order >= 2) jet.hess = 2.0 * s.P;
            if (order >= 3) jet.third.assign(q.size() * q.size() * q.size(), 0.0);
            return jet;
          }
        },
        shape_);
  }

  double body_value(const Eigen::VectorXd& q) const { return body_jet(q, 0).value; }

  /// A body-frame point strictly inside the set (F < 1). For the polytope
  /// and ellipsoid this is the minimiser of F.
  Eigen::VectorXd interior_point() const {
    return std::visit(
        [](const auto& s) -> Eigen::VectorXd {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Halfspace>) return -(s.b / s.a.squaredNorm()) * s.a;
          else if constexpr (std::is_same_v<T, SmoothPolytope>) return s.center;
          else return s.mu;
        },
        shape_);
  }

 private:
  using Shape = std::variant<Halfspace, SmoothPolytope, Ellipsoid>;

  explicit ScalingPrimitive(Shape s) : shape_(std::move(s)) {}

  static void check_dim(Eigen::Index n) {
    if (n != 2 && n != 3) throw InvalidArgument("primitives live in 2 or 3 dimensions");
  }

  Shape shape_;
};

}  // namespace scalecbf
