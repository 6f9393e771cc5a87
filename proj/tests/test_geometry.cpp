#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "scalecbf/scaling.hpp"
#include "support.hpp"

using namespace scalecbf;
using testsupport::rel_err;
using testsupport::Rng;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ScalingPrimitive random_primitive(Rng& rng, PrimitiveKind kind, int n) {
  switch (kind) {
    case PrimitiveKind::halfspace:
      return ScalingPrimitive::halfspace(rng.unit_vec(n) * rng.uniform(0.5, 2.0), rng.uniform(-1, 1));
    case PrimitiveKind::ellipsoid:
      return ScalingPrimitive::ellipsoid(rng.spd(n, 0.3, 3.0), rng.uniform_vec(n, -0.5, 0.5));
    case PrimitiveKind::polytope:
      for (;;) {
        const int N = static_cast<int>(rng.uniform(n + 2, 9));
        MatrixXd A(N, n);
        VectorXd b(N);
        for (int i = 0; i < N; ++i) {
          A.row(i) = rng.unit_vec(n).transpose();
          b(i) = -rng.uniform(0.5, 1.5);
        }
        try {
          return ScalingPrimitive::polytope(A, b, rng.uniform(2.0, 30.0));
        } catch (const InvalidArgument&) {
        }
      }
  }
  throw std::logic_error("unreachable");
}

Frame random_frame(Rng& rng, int n) {
  if (n == 2) return Frame::planar(rng.uniform_vec(2, -1, 1), rng.uniform(-3, 3));
  Eigen::Vector4d xi = rng.unit_vec(4);
  return Frame::spatial(rng.uniform_vec(3, -1, 1), xi);
}

VectorXd stack(const VectorXd& p, const VectorXd& theta) {
  VectorXd z(p.size() + theta.size());
  z << p, theta;
  return z;
}

ScalingJet jet_at(const ScalingPrimitive& prim, int n, const VectorXd& z, int order) {
  const Frame f = Frame::from_theta(n, z.tail(Frame::theta_size_for(n)));
  return eval_scaling(prim, f, z.head(n), order);
}

}  // namespace

TEST_CASE("unit square polytope vanishes at its centre") {
  MatrixXd A(4, 2);
  A << 1, 0, -1, 0, 0, 1, 0, -1;
  const VectorXd b = VectorXd::Constant(4, -1.0);
  for (double kappa : {0.5, 5.0, 80.0}) {
    const auto sq = ScalingPrimitive::polytope(A, b, kappa);
    CHECK(std::abs(scaling_value(sq, Frame::identity(2), VectorXd::Zero(2))) < 1e-14);
  }
}

TEST_CASE("unit ellipsoid value, gradient and Hessian at (2, 0)") {
  const auto e = ScalingPrimitive::ellipsoid(MatrixXd::Identity(2, 2), VectorXd::Zero(2));
  const ScalingJet j = eval_scaling(e, Frame::identity(2), Eigen::Vector2d(2, 0), 2);
  CHECK(j.value == Catch::Approx(4.0));
  CHECK((j.dFdp() - Eigen::Vector2d(4, 0)).norm() < 1e-14);
  CHECK((j.d2Fdp2() - 2 * MatrixXd::Identity(2, 2)).norm() < 1e-14);
}

TEST_CASE("rotated Example-1 ellipse derivatives match finite differences") {
  Rng rng(11);
  const auto e = ScalingPrimitive::axis_ellipsoid(Eigen::Vector2d(2.0, 1.5));
  const Frame f = Frame::planar(Eigen::Vector2d(0.0, -0.8), std::numbers::pi / 6);
  for (int k = 0; k < 20; ++k) {
    const VectorXd p = rng.uniform_vec(2, -4, 4);
    const ScalingJet j = eval_scaling(e, f, p, 1);
    auto val = [&](const VectorXd& q) { return scaling_value(e, f, q); };
    CHECK(rel_err(j.dFdp(), testsupport::fd_gradient(val, p)) < 1e-6);
  }
}

TEST_CASE("jet blocks agree with finite differences of the next lower block") {
  Rng rng(2024);
  for (int n : {2, 3}) {
    for (auto kind : {PrimitiveKind::halfspace, PrimitiveKind::polytope, PrimitiveKind::ellipsoid}) {
      double e1 = 0, e2 = 0, e3 = 0;
      for (int trial = 0; trial < 100; ++trial) {
        const auto prim = random_primitive(rng, kind, n);
        const Frame f = random_frame(rng, n);
        const VectorXd z = stack(rng.uniform_vec(n, -3, 3), f.theta());
        const ScalingJet j = jet_at(prim, n, z, 3);
        const int nz = j.nz();

        auto val = [&](const VectorXd& x) { return jet_at(prim, n, x, 0).value; };
        auto grad = [&](const VectorXd& x) { return VectorXd(jet_at(prim, n, x, 1).grad); };
        auto hess_col = [&](int c) {
          return [&, c](const VectorXd& x) { return VectorXd(jet_at(prim, n, x, 2).hess.col(c)); };
        };
        e1 = std::max(e1, rel_err(j.grad, testsupport::fd_gradient(val, z)));
        e2 = std::max(e2, rel_err(j.hess, testsupport::fd_jacobian(grad, z)));
        for (int c = 0; c < nz; ++c) {
          const MatrixXd T = testsupport::fd_jacobian(hess_col(c), z);
          MatrixXd A(nz, nz);
          for (int a = 0; a < nz; ++a)
            for (int b = 0; b < nz; ++b) A(a, b) = j.d3(a, c, b);
          e3 = std::max(e3, rel_err(A, T));
        }
        CHECK((j.hess - j.hess.transpose()).cwiseAbs().maxCoeff() < 1e-12 * (1 + j.hess.norm()));
      }
      INFO("n=" << n << " kind=" << to_string(kind));
      CHECK(e1 < 1e-5);
      CHECK(e2 < 1e-5);
      CHECK(e3 < 1e-4);
    }
  }
}

TEST_CASE("position Hessian is PSD, and PD for ellipsoids") {
  Rng rng(5);
  for (int n : {2, 3}) {
    for (auto kind : {PrimitiveKind::polytope, PrimitiveKind::ellipsoid}) {
      for (int t = 0; t < 50; ++t) {
        const auto prim = random_primitive(rng, kind, n);
        const Frame f = random_frame(rng, n);
        const ScalingJet j = eval_scaling(prim, f, rng.uniform_vec(n, -3, 3), 2);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(j.d2Fdp2());
        CHECK(es.eigenvalues().minCoeff() >= -1e-10);
        if (kind == PrimitiveKind::ellipsoid) CHECK(es.eigenvalues().minCoeff() > 0.0);
      }
    }
  }
}

TEST_CASE("jets omit blocks above the requested order") {
  const auto e = ScalingPrimitive::ball(Eigen::Vector2d(0, 0), 1.0);
  const ScalingJet j0 = eval_scaling(e, Frame::identity(2), Eigen::Vector2d(1, 1), 0);
  CHECK(j0.grad.size() == 0);
  const ScalingJet j2 = eval_scaling(e, Frame::identity(2), Eigen::Vector2d(1, 1), 2);
  CHECK(j2.hess.rows() == 5);
  CHECK(j2.third.empty());
  CHECK_THROWS_AS(eval_scaling(e, Frame::identity(2), Eigen::Vector2d(1, 1), 4), InvalidArgument);
  CHECK_THROWS_AS(eval_scaling(e, Frame::identity(3), Eigen::Vector3d(1, 1, 0), 1), InvalidArgument);
}

TEST_CASE("primitive constructors reject invalid data") {
  CHECK_THROWS_AS(ScalingPrimitive::halfspace(Eigen::Vector2d::Zero(), 0.0), InvalidArgument);
  MatrixXd A(4, 2);
  A << 1, 0, -1, 0, 0, 1, 0, -1;
  CHECK_THROWS_AS(ScalingPrimitive::polytope(A, -VectorXd::Ones(4), 0.0), InvalidArgument);
  CHECK_THROWS_AS(ScalingPrimitive::polytope(A.topRows(2), -VectorXd::Ones(2), 5.0), InvalidArgument);
  MatrixXd open(3, 2);
  open << 1, 0, 0, 1, 1, 1;
  CHECK_THROWS_AS(ScalingPrimitive::polytope(open, -VectorXd::Ones(3), 5.0), InvalidArgument);
  MatrixXd P(2, 2);
  P << 1, 0, 0, -1;
  CHECK_THROWS_AS(ScalingPrimitive::ellipsoid(P, VectorXd::Zero(2)), InvalidArgument);
  P << 1, 0.5, 0, 1;
  CHECK_THROWS_AS(ScalingPrimitive::ellipsoid(P, VectorXd::Zero(2)), InvalidArgument);
}

TEST_CASE("gradient does not vanish outside the set") {
  const auto e = ScalingPrimitive::ellipsoid(MatrixXd::Identity(2, 2), VectorXd::Zero(2));
  CHECK(gradient_nonzero_outside(e, Frame::identity(2), Eigen::Vector2d(2, 0)));
  const auto h = ScalingPrimitive::halfspace(Eigen::Vector2d(1, 0), 0.0);
  CHECK(gradient_nonzero_outside(h, Frame::identity(2), Eigen::Vector2d(3, 0)));

  Rng rng(99);
  int tested = 0;
  while (tested < 200) {
    const int n = tested % 2 ? 3 : 2;
    const auto kind = static_cast<PrimitiveKind>(tested % 3);
    const auto prim = random_primitive(rng, kind, n);
    const Frame f = random_frame(rng, n);
    const VectorXd p = rng.uniform_vec(n, -6, 6);
    if (scaling_value(prim, f, p) <= 1.0) continue;
    CHECK(gradient_nonzero_outside(prim, f, p));
    ++tested;
  }
}

TEST_CASE("sublevel set matches the defining set") {
  Rng rng(7);
  for (int n : {2, 3}) {
    const auto ell = random_primitive(rng, PrimitiveKind::ellipsoid, n);
    const auto& E = *ell.as_ellipsoid();
    const auto poly = random_primitive(rng, PrimitiveKind::polytope, n);
    const auto& S = *poly.as_polytope();
    const auto half = random_primitive(rng, PrimitiveKind::halfspace, n);
    const auto& H = *half.as_halfspace();
    for (int t = 0; t < 1000; ++t) {
      const VectorXd q = rng.uniform_vec(n, -3, 3);
      const VectorXd d = q - E.mu;
      CHECK((ell.body_value(q) <= 1.0) == (d.dot(E.P * d) <= 1.0));
      CHECK((half.body_value(q) <= 1.0) == (H.a.dot(q) + H.b <= 1.0));
      if ((S.A * q + S.b).maxCoeff() <= 0.0) CHECK(poly.body_value(q) <= 1.0);
    }
  }
}

TEST_CASE("scaling functions are convex along random segments") {
  Rng rng(8);
  for (int n : {2, 3}) {
    for (auto kind : {PrimitiveKind::halfspace, PrimitiveKind::polytope, PrimitiveKind::ellipsoid}) {
      const auto prim = random_primitive(rng, kind, n);
      const Frame f = random_frame(rng, n);
      for (int t = 0; t < 200; ++t) {
        const VectorXd p1 = rng.uniform_vec(n, -4, 4), p2 = rng.uniform_vec(n, -4, 4);
        const double s = rng.uniform(0, 1);
        const double mid = scaling_value(prim, f, s * p1 + (1 - s) * p2);
        CHECK(mid <= s * scaling_value(prim, f, p1) + (1 - s) * scaling_value(prim, f, p2) + 1e-10);
      }
    }
  }
}

TEST_CASE("moving frame and point together leaves F unchanged") {
  Rng rng(10);
  for (int n : {2, 3}) {
    for (auto kind : {PrimitiveKind::halfspace, PrimitiveKind::polytope, PrimitiveKind::ellipsoid}) {
      const auto prim = random_primitive(rng, kind, n);
      for (int t = 0; t < 50; ++t) {
        const Frame f = random_frame(rng, n);
        const Frame motion = random_frame(rng, n);
        const VectorXd p = rng.uniform_vec(n, -3, 3);
        const double before = scaling_value(prim, f, p);
        const double after = scaling_value(prim, f.transformed_by(motion), motion.to_world(p));
        CHECK(std::abs(before - after) <= 1e-12 * std::max(1.0, std::abs(before)));
      }
    }
  }
}

TEST_CASE("polytope Hessian grows at most linearly in kappa") {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    const int n = t % 2 ? 3 : 2;
    const auto prim = random_primitive(rng, PrimitiveKind::polytope, n);
    const auto& S = *prim.as_polytope();
    const ScalingJet j = eval_scaling(prim, Frame::identity(n), rng.uniform_vec(n, -2, 2), 2);
    const double bound = S.kappa * std::pow(S.A.operatorNorm(), 2);
    CHECK(j.d2Fdp2().operatorNorm() <= bound * (1 + 1e-12));
  }
}

TEST_CASE("polytope evaluation stays finite for large kappa and far points") {
  const auto sq = ScalingPrimitive::box(Eigen::Vector2d(1, 1), 200.0);
  const ScalingJet j = eval_scaling(sq, Frame::identity(2), Eigen::Vector2d(50, -30), 2);
  CHECK(std::isfinite(j.value));
  CHECK(j.value == Catch::Approx(50.0 - 1.0 + 1.0 - std::log(4.0) / 200.0).epsilon(1e-12));
  CHECK(j.hess.allFinite());
}

TEST_CASE("theta rates in the plane and in space") {
  const Frame f2 = Frame::planar(Eigen::Vector2d(0, 0), 0.3);
  const VectorXd r2 = theta_rates(f2, Eigen::Vector2d(1, 2), VectorXd::Constant(1, 0.5));
  CHECK((r2 - Eigen::Vector3d(1, 2, 0.5)).norm() == 0.0);

  const Frame f3 = Frame::spatial(Eigen::Vector3d::Zero());
  const VectorXd r3 = theta_rates(f3, Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 0, 1));
  CHECK((r3.tail(4) - Eigen::Vector4d(0, 0, 0.5, 0)).norm() == 0.0);

  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const Frame f = Frame::spatial(rng.uniform_vec(3, -1, 1), rng.unit_vec(4));
    const VectorXd r = theta_rates(f, rng.uniform_vec(3, -1, 1), rng.uniform_vec(3, -2, 2));
    CHECK(std::abs(2 * f.quaternion().dot(r.tail(4))) < 1e-12);
  }

  Diagnostics diag;
  const Frame drifted = Frame::spatial(Eigen::Vector3d::Zero(), Eigen::Vector4d(0, 0, 0, 1.01));
  theta_rates(drifted, Eigen::Vector3d::Zero(), Eigen::Vector3d(1, 0, 0), &diag);
  CHECK(diag.messages.size() == 1);
  CHECK_THROWS_AS(theta_rates(f2, Eigen::Vector2d(1, 2), Eigen::Vector3d(0, 0, 1)), InvalidArgument);
}

TEST_CASE("quaternion rate matrix drives the rotation by a world angular velocity") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Eigen::Vector4d xi = rng.unit_vec(4);
    const Eigen::Vector3d w = rng.uniform_vec(3, -1, 1);
    const Eigen::Vector4d xidot = 0.5 * quaternion_rate_matrix(xi) * w;
    const double h = 1e-6;
    const Eigen::Matrix3d Rdot =
        (quaternion_matrix(xi + h * xidot) - quaternion_matrix(xi - h * xidot)) / (2 * h);
    Eigen::Matrix3d W;
    W << 0, -w(2), w(1), w(2), 0, -w(0), -w(1), w(0), 0;
    CHECK((Rdot - W * quaternion_matrix(xi)).cwiseAbs().maxCoeff() < 1e-8);
    const Eigen::Matrix3d R = quaternion_matrix(xi);
    CHECK((R.transpose() * R - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(R.determinant() == Catch::Approx(1.0).epsilon(1e-12));
  }
}
