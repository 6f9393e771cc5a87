#pragma once

// Rigid body frames and their flattened parameter vectors.
//
// A frame maps body coordinates to world coordinates by  p_w = R p_b + o.
// The parameter vector is theta = [o; beta] in the plane (length 3) and
// theta = [o; xi] in space (length 7). Quaternions are stored in
// (x, y, z, w) order, Hamilton convention, so that the rate matrix Q(xi)
// below multiplies a world-frame angular velocity.
//
// All derivatives with respect to xi are taken in the ambient R^4: the
// rotation matrix is the plain quadratic form in (x, y, z, w) and is never
// renormalised. Second derivatives are therefore constant and third
// derivatives vanish.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "scalecbf/errors.hpp"

namespace scalecbf {

/// Collects non-fatal diagnostics from numerical routines.
struct Diagnostics {
  std::vector<std::string> messages;

  void note(std::string msg) { messages.push_back(std::move(msg)); }
  bool empty() const { return messages.empty(); }
};

inline constexpr double kQuaternionNormTol = 1e-6;

/// Rotation matrix of the quaternion (x, y, z, w) without normalisation.
inline Eigen::Matrix3d quaternion_matrix(const Eigen::Vector4d& xi) {
  const double x = xi(0), y = xi(1), z = xi(2), w = xi(3);
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
      2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
      2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
  return R;
}

/// The 4x3 matrix with  d/dt xi = 0.5 * Q(xi) * omega  (omega in world frame).
inline Eigen::Matrix<double, 4, 3> quaternion_rate_matrix(
    const Eigen::Vector4d& xi) {
  const double x = xi(0), y = xi(1), z = xi(2), w = xi(3);
  Eigen::Matrix<double, 4, 3> Q;
  Q << w, z, -y,  //
      -z, w, x,   //
      y, -x, w,   //
      -x, -y, -z;
  return Q;
}

inline Eigen::Matrix2d planar_rotation(double beta) {
  Eigen::Matrix2d R;
  R << std::cos(beta), -std::sin(beta), std::sin(beta), std::cos(beta);
  return R;
}

/// Rotation matrix and its partial derivatives with respect to the
/// orientation parameters r (r = beta, or r = xi).
struct RotationJet {
  Eigen::MatrixXd R;
  int n_r = 0;
  std::vector<Eigen::MatrixXd> d1;  // [k]
  std::vector<Eigen::MatrixXd> d2;  // [k * n_r + l]
  std::vector<Eigen::MatrixXd> d3;  // [(k * n_r + l) * n_r + m]
};

class Frame {
 public:
  static Frame planar(const Eigen::Vector2d& origin, double angle = 0.0) {
    Frame f;
    f.dim_ = 2;
    f.origin_ = origin;
    f.orientation_ = Eigen::VectorXd::Constant(1, angle);
    return f;
  }

  static Frame spatial(const Eigen::Vector3d& origin,
                       const Eigen::Vector4d& xi = Eigen::Vector4d(0, 0, 0, 1)) {
    Frame f;
    f.dim_ = 3;
    f.origin_ = origin;
    f.orientation_ = xi;
    return f;
  }

  static Frame identity(int dim) {
    if (dim == 2) return planar(Eigen::Vector2d::Zero());
    if (dim == 3) return spatial(Eigen::Vector3d::Zero());
    throw InvalidArgument("frame dimension must be 2 or 3");
  }

  static Frame from_theta(int dim, const Eigen::VectorXd& theta) {
    if (dim != 2 && dim != 3) throw InvalidArgument("frame dimension must be 2 or 3");
    if (theta.size() != theta_size_for(dim)) {
      throw InvalidArgument("theta has length " + std::to_string(theta.size()) +
                            ", expected " + std::to_string(theta_size_for(dim)));
    }
    Frame f;
    f.dim_ = dim;
    f.origin_ = theta.head(dim);
    f.orientation_ = theta.tail(dim == 2 ? 1 : 4);
    return f;
  }

  static constexpr int theta_size_for(int dim) { return dim == 2 ? 3 : 7; }

  int dim() const { return dim_; }
  int orientation_size() const { return dim_ == 2 ? 1 : 4; }
  int theta_size() const { return theta_size_for(dim_); }

  const Eigen::VectorXd& origin() const { return origin_; }
  const Eigen::VectorXd& orientation() const { return orientation_; }

  double angle() const {
    if (dim_ != 2) throw InvalidArgument("angle() is only defined for planar frames");
    return orientation_(0);
  }

  Eigen::Vector4d quaternion() const {
    if (dim_ != 3) throw InvalidArgument("quaternion() is only defined for spatial frames");
    return orientation_;
  }

  /// Flattened parameter vector [o; beta] or [o; xi].
  Eigen::VectorXd theta() const {
    Eigen::VectorXd t(theta_size());
    t << origin_, orientation_;
    return t;
  }

  Eigen::MatrixXd rotation() const {
    if (dim_ == 2) return planar_rotation(orientation_(0));
    return quaternion_matrix(orientation_);
  }

  Eigen::VectorXd to_world(const Eigen::VectorXd& body_point) const {
    return rotation() * body_point + origin_;
  }

  Eigen::VectorXd to_body(const Eigen::VectorXd& world_point) const {
    return rotation().transpose() * (world_point - origin_);
  }

  /// The frame obtained by applying the rigid motion `motion` to this one.
  Frame transformed_by(const Frame& motion) const {
    if (motion.dim_ != dim_) throw InvalidArgument("frame dimension mismatch");
    Frame f = *this;
    f.origin_ = motion.rotation() * origin_ + motion.origin_;
    if (dim_ == 2) {
      f.orientation_(0) = motion.orientation_(0) + orientation_(0);
    } else {
      // Hamilton product motion * this, components in (x, y, z, w).
      const Eigen::Vector4d a = motion.orientation_, b = orientation_;
      const Eigen::Vector3d va = a.head<3>(), vb = b.head<3>();
      Eigen::Vector4d out;
      out.head<3>() = a(3) * vb + b(3) * va + va.cross(vb);
      out(3) = a(3) * b(3) - va.dot(vb);
      f.orientation_ = out;
    }
    return f;
  }

  double quaternion_norm_drift() const {
    if (dim_ != 3) return 0.0;
    return std::abs(orientation_.norm() - 1.0);
  }

 private:
  Frame() = default;

  int dim_ = 2;
  Eigen::VectorXd origin_;
  Eigen::VectorXd orientation_;
};

inline Eigen::VectorXd flatten_theta(const Frame& frame) { return frame.theta(); }

/// theta_dot for a body moving with linear velocity v and angular velocity
/// omega (a 1-vector in the plane, a world-frame 3-vector in space).
inline Eigen::VectorXd theta_rates(const Frame& frame, const Eigen::VectorXd& v,
                                   const Eigen::VectorXd& omega,
                                   Diagnostics* diag = nullptr) {
  if (v.size() != frame.dim()) throw InvalidArgument("linear velocity has wrong length");
  Eigen::VectorXd rates(frame.theta_size());
  rates.head(frame.dim()) = v;
  if (frame.dim() == 2) {
    if (omega.size() != 1) throw InvalidArgument("planar angular velocity must be a scalar");
    rates(2) = omega(0);
    return rates;
  }
  if (omega.size() != 3) throw InvalidArgument("spatial angular velocity must have length 3");
  if (diag && frame.quaternion_norm_drift() > kQuaternionNormTol) {
    diag->note("quaternion norm drift " + std::to_string(frame.quaternion_norm_drift()) +
               "; rates use the ambient parameterisation");
  }
  rates.tail(4) = 0.5 * quaternion_rate_matrix(frame.quaternion()) * omega;
  return rates;
}

/// Rotation matrix with derivatives up to `order` in the orientation
/// parameters of `frame`.
inline RotationJet rotation_jet(const Frame& frame, int order) {
  RotationJet jet;
  jet.R = frame.rotation();
  jet.n_r = frame.orientation_size();
  if (order < 1) return jet;

  if (frame.dim() == 2) {
    Eigen::Matrix2d S;
    S << 0, -1, 1, 0;
    const Eigen::Matrix2d R = jet.R;
    jet.d1 = {R * S};
    if (order >= 2) jet.d2 = {-R};
    if (order >= 3) jet.d3 = {-R * S};
    return jet;
  }

  // R(xi) = C + B(xi, xi); Hessian entries by polarisation are constant.
  const Eigen::Vector4d xi = frame.quaternion();
  const Eigen::Matrix3d R0 = quaternion_matrix(Eigen::Vector4d::Zero());
  std::vector<Eigen::MatrixXd> hess(16);
  for (int k = 0; k < 4; ++k) {
    for (int l = 0; l < 4; ++l) {
      const Eigen::Vector4d ek = Eigen::Vector4d::Unit(k), el = Eigen::Vector4d::Unit(l);
      if (k == l) {
        hess[k * 4 + l] = 2.0 * (quaternion_matrix(ek) - R0);
      } else {
        hess[k * 4 + l] =
            quaternion_matrix(ek + el) - quaternion_matrix(ek) - quaternion_matrix(el) + R0;
      }
    }
  }
  jet.d1.assign(4, Eigen::MatrixXd::Zero(3, 3));
  for (int k = 0; k < 4; ++k)
    for (int l = 0; l < 4; ++l) jet.d1[k] += hess[k * 4 + l] * xi(l);
  if (order >= 2) jet.d2 = hess;
  if (order >= 3) jet.d3.assign(64, Eigen::MatrixXd::Zero(3, 3));
  return jet;
}

}  // namespace scalecbf
