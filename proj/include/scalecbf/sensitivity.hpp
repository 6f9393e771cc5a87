#pragma once

// Minimal scaling factor between two convex bodies,
//
//   alpha*(theta) = min_p F_A(p, theta_A)   s.t.  F_B(p, theta_B) <= 1,
//
// and its first and second derivatives in theta = [theta_A; theta_B],
// obtained by differentiating the KKT system
//
//   dF_A/dp + lambda dF_B/dp = 0,   F_B = 1.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "scalecbf/errors.hpp"
#include "scalecbf/frame.hpp"
#include "scalecbf/primitives.hpp"
#include "scalecbf/scaling.hpp"

namespace scalecbf {

inline constexpr double kKktTol = 1e-10;

struct Body {
  ScalingPrimitive shape;
  Frame frame;
};

enum class PairKind { ellipsoid_ellipsoid, ellipsoid_halfspace, halfspace_ellipsoid,
                      ellipsoid_polytope, polytope_ellipsoid };

inline const char* to_string(PairKind k) {
  switch (k) {
    case PairKind::ellipsoid_ellipsoid: return "ellipsoid-ellipsoid";
    case PairKind::ellipsoid_halfspace: return "ellipsoid-halfspace";
    case PairKind::halfspace_ellipsoid: return "halfspace-ellipsoid";
    case PairKind::ellipsoid_polytope: return "ellipsoid-polytope";
    case PairKind::polytope_ellipsoid: return "polytope-ellipsoid";
  }
  return "unknown";
}

/// Body A is scaled, body B is the constraint set.
class PrimitivePair {
 public:
  PrimitivePair(Body a, Body b) : A(std::move(a)), B(std::move(b)) {
    if (A.shape.dim() != B.shape.dim() || A.frame.dim() != A.shape.dim() ||
        B.frame.dim() != B.shape.dim()) {
      throw InvalidArgument("pair members must share one spatial dimension");
    }
    kind_ = classify(A.shape.kind(), B.shape.kind());
  }

  Body A;
  Body B;

  PairKind kind() const { return kind_; }
  int dim() const { return A.shape.dim(); }
  int theta_a_size() const { return A.frame.theta_size(); }
  int theta_b_size() const { return B.frame.theta_size(); }
  int theta_size() const { return theta_a_size() + theta_b_size(); }

  Eigen::VectorXd theta() const {
    Eigen::VectorXd t(theta_size());
    t << A.frame.theta(), B.frame.theta();
    return t;
  }

  /// Same shapes placed at the frames encoded by `theta`.
  PrimitivePair with_theta(const Eigen::VectorXd& theta) const {
    if (theta.size() != theta_size()) throw InvalidArgument("theta has the wrong length");
    return PrimitivePair(Body{A.shape, Frame::from_theta(dim(), theta.head(theta_a_size()))},
                         Body{B.shape, Frame::from_theta(dim(), theta.tail(theta_b_size()))});
  }

 private:
  static PairKind classify(PrimitiveKind a, PrimitiveKind b) {
    using K = PrimitiveKind;
    if (a == K::ellipsoid && b == K::ellipsoid) return PairKind::ellipsoid_ellipsoid;
    if (a == K::ellipsoid && b == K::halfspace) return PairKind::ellipsoid_halfspace;
    if (a == K::halfspace && b == K::ellipsoid) return PairKind::halfspace_ellipsoid;
    if (a == K::ellipsoid && b == K::polytope) return PairKind::ellipsoid_polytope;
    if (a == K::polytope && b == K::ellipsoid) return PairKind::polytope_ellipsoid;
    throw InvalidArgument(std::string("unsupported pair ") + to_string(a) + "-" + to_string(b) +
                          ": one member must be an ellipsoid and the other may not be " +
                          "a halfspace or polytope of the same family");
  }

  PairKind kind_;
};

enum class SolverTag { closed_form, newton_kkt };

inline const char* to_string(SolverTag t) {
  return t == SolverTag::closed_form ? "closed_form" : "newton_kkt";
}

struct MinScalingSolution {
  double alpha = 0.0;
  Eigen::VectorXd p;
  double lambda = 0.0;
  double kkt_residual = 0.0;
  SolverTag solver = SolverTag::closed_form;
  int iterations = 0;
  bool constraint_active = true;  // false when A's own minimiser lies in B
  Diagnostics diag;
};

struct AlphaSensitivity {
  MinScalingSolution solution;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;  // empty unless requested
  double hess_asymmetry = 0.0;
  Eigen::MatrixXd dp_dtheta;
  Eigen::RowVectorXd dlambda_dtheta;
};

/// World-frame ellipsoid (p - mu)' P (p - mu) of a placed ellipsoid primitive.
struct WorldEllipsoid {
  Eigen::MatrixXd P;
  Eigen::VectorXd mu;
};

inline WorldEllipsoid world_ellipsoid(const Body& body) {
  const Ellipsoid* e = body.shape.as_ellipsoid();
  if (!e) throw InvalidArgument("body is not an ellipsoid");
  const Eigen::MatrixXd R = body.frame.rotation();
  WorldEllipsoid w;
  w.P = R * e->P * R.transpose();
  w.P = 0.5 * (w.P + w.P.transpose());
  // R is only orthogonal for unit quaternions; solve instead of transposing.
  w.mu = body.frame.origin() + R.transpose().partialPivLu().solve(e->mu);
  return w;
}

/// World-frame halfspace a'p + b.
inline Halfspace world_halfspace(const Body& body) {
  const Halfspace* h = body.shape.as_halfspace();
  if (!h) throw InvalidArgument("body is not a halfspace");
  const Eigen::VectorXd a = body.frame.rotation() * h->a;
  return Halfspace{a, h->b - a.dot(body.frame.origin())};
}

/// Max-norm of [dF_A/dp + lambda dF_B/dp; F_B - 1] (feasibility term is
/// dropped when the constraint is inactive).
inline double kkt_residual(const PrimitivePair& pair, const Eigen::VectorXd& p, double lambda,
                           bool active = true) {
  const ScalingJet ja = eval_scaling(pair.A.shape, pair.A.frame, p, 1);
  const ScalingJet jb = eval_scaling(pair.B.shape, pair.B.frame, p, 1);
  double r = (ja.dFdp() + lambda * jb.dFdp()).lpNorm<Eigen::Infinity>();
  if (active) r = std::max(r, std::abs(jb.value - 1.0));
  else r = std::max(r, std::max(0.0, jb.value - 1.0));
  return r;
}

namespace detail {

inline MinScalingSolution finish(const PrimitivePair& pair, Eigen::VectorXd p, double lambda,
                                 SolverTag tag, bool active) {
  MinScalingSolution s;
  s.p = std::move(p);
  s.lambda = lambda;
  s.alpha = scaling_value(pair.A.shape, pair.A.frame, s.p);
  s.kkt_residual = kkt_residual(pair, s.p, lambda, active);
  s.solver = tag;
  s.constraint_active = active;
  return s;
}

/// World minimiser of F_A when it exists (ellipsoid, polytope).
inline std::optional<Eigen::VectorXd> unconstrained_minimizer(const Body& body) {
  if (body.shape.kind() == PrimitiveKind::halfspace) return std::nullopt;
  if (const Ellipsoid* e = body.shape.as_ellipsoid()) {
    (void)e;
    return world_ellipsoid(body).mu;
  }
  // Polytope: the body minimiser maps through the frame. For a non-unit
  // quaternion the map q = R'(p - o) is inverted explicitly.
  const Eigen::MatrixXd R = body.frame.rotation();
  return Eigen::VectorXd(body.frame.origin() +
                         R.transpose().partialPivLu().solve(body.shape.interior_point()));
}

/// Argmin of F_A + lambda F_B by damped Newton, warm-started at p.
inline Eigen::VectorXd penalized_minimizer(const PrimitivePair& pair, double lambda,
                                           Eigen::VectorXd p) {
  auto value = [&](const Eigen::VectorXd& x) {
    return scaling_value(pair.A.shape, pair.A.frame, x) +
           lambda * scaling_value(pair.B.shape, pair.B.frame, x);
  };
  for (int it = 0; it < 200; ++it) {
    const ScalingJet ja = eval_scaling(pair.A.shape, pair.A.frame, p, 2);
    const ScalingJet jb = eval_scaling(pair.B.shape, pair.B.frame, p, 2);
    const Eigen::VectorXd g = ja.dFdp() + lambda * jb.dFdp();
    const Eigen::MatrixXd H = ja.d2Fdp2() + lambda * jb.d2Fdp2();
    const Eigen::VectorXd step = -H.ldlt().solve(g);
    const double f0 = ja.value + lambda * jb.value;
    const double slope = g.dot(step);
    if (!(slope < 0.0) || -slope < 1e-30) return p;
    double t = 1.0;
    for (int k = 0; k < 60 && value(p + t * step) > f0 + 1e-4 * t * slope; ++k) t *= 0.5;
    p += t * step;
    if (-slope < 1e-26 * (1.0 + std::abs(f0))) return p;
  }
  return p;
}

}  // namespace detail

struct NewtonOptions {
  int max_iter = 100;
  int max_backtracks = 30;
  double backtrack_factor = 0.5;
  double armijo = 1e-4;
  double tol = kKktTol;
};

struct KktInit {
  Eigen::VectorXd p;
  double lambda = 1.0;
};

namespace detail {

struct NewtonOutcome {
  Eigen::VectorXd p;
  double lambda = 0.0;
  double residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  std::string failure;
};

inline Eigen::VectorXd kkt_vector(const PrimitivePair& pair, const Eigen::VectorXd& p,
                                  double lambda) {
  const int n = pair.dim();
  const ScalingJet ja = eval_scaling(pair.A.shape, pair.A.frame, p, 1);
  const ScalingJet jb = eval_scaling(pair.B.shape, pair.B.frame, p, 1);
  Eigen::VectorXd r(n + 1);
  r.head(n) = ja.dFdp() + lambda * jb.dFdp();
  r(n) = jb.value - 1.0;
  return r;
}

/// A few undamped steps past the tolerance, kept only while the residual
/// keeps dropping. Finite-difference checks of alpha* need the extra digits.
inline void polish(const PrimitivePair& pair, NewtonOutcome& out) {
  const int n = pair.dim();
  for (int k = 0; k < 3 && out.residual > 1e-15; ++k) {
    const ScalingJet ja = eval_scaling(pair.A.shape, pair.A.frame, out.p, 2);
    const ScalingJet jb = eval_scaling(pair.B.shape, pair.B.frame, out.p, 2);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n + 1, n + 1);
    J.topLeftCorner(n, n) = ja.d2Fdp2() + out.lambda * jb.d2Fdp2();
    J.topRightCorner(n, 1) = jb.dFdp();
    J.bottomLeftCorner(1, n) = jb.dFdp().transpose();
    const Eigen::VectorXd step = -J.partialPivLu().solve(kkt_vector(pair, out.p, out.lambda));
    const Eigen::VectorXd p = out.p + step.head(n);
    const double lambda = out.lambda + step(n);
    const double r = kkt_vector(pair, p, lambda).lpNorm<Eigen::Infinity>();
    if (!(r < out.residual)) break;
    out.p = p;
    out.lambda = lambda;
    out.residual = r;
  }
}

inline NewtonOutcome damped_newton(const PrimitivePair& pair, Eigen::VectorXd p, double lambda,
                                   const NewtonOptions& opt) {
  const int n = pair.dim();
  NewtonOutcome out;
  Eigen::VectorXd r = kkt_vector(pair, p, lambda);
  for (int it = 0; it <= opt.max_iter; ++it) {
    out.iterations = it;
    out.residual = r.lpNorm<Eigen::Infinity>();
    if (out.residual <= opt.tol) {
      out.converged = true;
      break;
    }
    if (it == opt.max_iter) {
      out.failure = "iteration limit";
      break;
    }
    const ScalingJet ja = eval_scaling(pair.A.shape, pair.A.frame, p, 2);
    const ScalingJet jb = eval_scaling(pair.B.shape, pair.B.frame, p, 2);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n + 1, n + 1);
    J.topLeftCorner(n, n) = ja.d2Fdp2() + lambda * jb.d2Fdp2();
    J.topRightCorner(n, 1) = jb.dFdp();
    J.bottomLeftCorner(1, n) = jb.dFdp().transpose();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
    if (!(std::abs(lu.determinant()) > 0.0) || !(lu.rcond() > 1e-15)) {
      out.failure = "singular KKT Jacobian";
      break;
    }
    const Eigen::VectorXd step = -lu.solve(r);
    const double r0 = r.norm();
    double t = 1.0;
    bool accepted = false;
    for (int k = 0; k <= opt.max_backtracks; ++k) {
      const Eigen::VectorXd pt = p + t * step.head(n);
      const double lt = lambda + t * step(n);
      const Eigen::VectorXd rt = kkt_vector(pair, pt, lt);
      if (rt.allFinite() && rt.norm() <= (1.0 - opt.armijo * t) * r0) {
        p = pt;
        lambda = lt;
        r = rt;
        accepted = true;
        break;
      }
      t *= opt.backtrack_factor;
    }
    if (!accepted) {
      out.failure = "line search failed";
      out.residual = r.lpNorm<Eigen::Infinity>();
      break;
    }
  }
  out.p = p;
  out.lambda = lambda;
  if (out.converged) polish(pair, out);
  return out;
}

/// Root of g(lambda) = F_B(p(lambda)) - 1 with p(lambda) the penalised
/// minimiser; g is decreasing, so a bracket in log(lambda) always exists.
inline std::pair<Eigen::VectorXd, double> dual_path(const PrimitivePair& pair,
                                                    Eigen::VectorXd p0) {
  Eigen::VectorXd p = p0;
  auto g_at = [&](double lam, Eigen::VectorXd& x) {
    x = penalized_minimizer(pair, lam, x);
    return scaling_value(pair.B.shape, pair.B.frame, x) - 1.0;
  };
  double lo = 1.0, hi = 1.0;
  Eigen::VectorXd plo = p, phi = p;
  double glo = g_at(lo, plo);
  phi = plo;
  double ghi = glo;
  for (int k = 0; k < 80 && glo < 0.0; ++k) {
    hi = lo, phi = plo, ghi = glo;
    lo *= 0.25;
    glo = g_at(lo, plo);
  }
  for (int k = 0; k < 80 && ghi > 0.0; ++k) {
    lo = hi, plo = phi, glo = ghi;
    hi *= 4.0;
    ghi = g_at(hi, phi);
  }
  if (glo < 0.0 || ghi > 0.0) throw SolverFailure("could not bracket the multiplier", std::abs(glo));
  double lam = std::sqrt(lo * hi);
  p = 0.5 * (plo + phi);
  for (int it = 0; it < 200; ++it) {
    const double g = g_at(lam, p);
    if (std::abs(g) <= 1e-13) break;
    if (g > 0.0) lo = lam;
    else hi = lam;
    // Newton step in lambda: g'(lambda) = -gB' H^-1 gB.
    const ScalingJet ja = eval_scaling(pair.A.shape, pair.A.frame, p, 2);
    const ScalingJet jb = eval_scaling(pair.B.shape, pair.B.frame, p, 2);
    const Eigen::MatrixXd H = ja.d2Fdp2() + lam * jb.d2Fdp2();
    const double dg = -jb.dFdp().dot(H.ldlt().solve(jb.dFdp()));
    double next = dg < 0.0 ? lam - g / dg : std::sqrt(lo * hi);
    if (!(next > lo && next < hi)) next = std::sqrt(lo * hi);
    if (std::abs(next - lam) <= 1e-15 * lam) break;
    lam = next;
  }
  return {p, lam};
}

}  // namespace detail

namespace detail {

/// Starting point on the boundary of B, on the segment from B's interior
/// point towards A (B's centre itself has a vanishing constraint gradient),
/// with the least-squares multiplier there.
inline std::pair<Eigen::VectorXd, double> default_start(const PrimitivePair& pair) {
  const Eigen::MatrixXd Rb = pair.B.frame.rotation();
  const Eigen::VectorXd cb =
      pair.B.frame.origin() + Rb.transpose().partialPivLu().solve(pair.B.shape.interior_point());
  Eigen::VectorXd target;
  if (auto pa = unconstrained_minimizer(pair.A)) {
    target = *pa;
  } else {
    // Halfspace A: head down its gradient.
    target = cb - world_halfspace(pair.A).a;
  }
  auto fb = [&](double t) { return scaling_value(pair.B.shape, pair.B.frame, cb + t * (target - cb)); };
  double lo = 0.0, hi = 1.0;
  for (int k = 0; k < 60 && fb(hi) < 1.0; ++k) hi *= 2.0;
  for (int k = 0; k < 60; ++k) {
    const double mid = 0.5 * (lo + hi);
    (fb(mid) < 1.0 ? lo : hi) = mid;
  }
  const Eigen::VectorXd p0 = cb + hi * (target - cb);
  const Eigen::VectorXd ga = eval_scaling(pair.A.shape, pair.A.frame, p0, 1).dFdp();
  const Eigen::VectorXd gb = eval_scaling(pair.B.shape, pair.B.frame, p0, 1).dFdp();
  double l0 = gb.squaredNorm() > 0.0 ? -ga.dot(gb) / gb.squaredNorm() : 1.0;
  if (!(l0 > 1e-3)) l0 = 1.0;
  return {p0, l0};
}

}  // namespace detail

/// Damped Newton on the KKT system. Falls back to a one-dimensional dual
/// root search when Newton stalls or lands on a stationary point with a
/// nonpositive multiplier, then polishes with Newton again.
inline MinScalingSolution newton_kkt(const PrimitivePair& pair,
                                     const std::optional<KktInit>& init = std::nullopt,
                                     const NewtonOptions& opt = {}) {
  if (auto pa = detail::unconstrained_minimizer(pair.A)) {
    if (scaling_value(pair.B.shape, pair.B.frame, *pa) <= 1.0) {
      MinScalingSolution s = detail::finish(pair, *pa, 0.0, SolverTag::newton_kkt, false);
      return s;
    }
  }

  Eigen::VectorXd p0;
  double l0 = 1.0;
  if (init) {
    p0 = init->p;
    l0 = init->lambda;
  } else {
    std::tie(p0, l0) = detail::default_start(pair);
  }

  detail::NewtonOutcome out = detail::damped_newton(pair, p0, l0, opt);
  Diagnostics diag;
  int extra = 0;
  if (!out.converged || !(out.lambda > 0.0)) {
    diag.note("newton: " + (out.converged ? std::string("nonpositive multiplier") : out.failure) +
              "; switching to dual path");
    extra = out.iterations;
    auto [p1, l1] = detail::dual_path(pair, p0);
    out = detail::damped_newton(pair, p1, l1, opt);
    if (!out.converged) {
      throw SolverFailure("newton_kkt did not converge: " + out.failure, out.residual);
    }
    if (!(out.lambda > 0.0)) throw SolverFailure("newton_kkt multiplier is not positive", out.residual);
  }
  MinScalingSolution s = detail::finish(pair, out.p, out.lambda, SolverTag::newton_kkt, true);
  s.iterations = out.iterations + extra;
  s.diag = std::move(diag);
  return s;
}

/// Closed-form minimiser for an ellipsoid against a halfspace (either role).
inline MinScalingSolution ellipsoid_halfspace_closed_form(const PrimitivePair& pair) {
  if (pair.kind() == PairKind::ellipsoid_halfspace) {
    const WorldEllipsoid e = world_ellipsoid(pair.A);
    const Halfspace h = world_halfspace(pair.B);
    const Eigen::VectorXd Pia = e.P.llt().solve(h.a);
    const double s = h.a.dot(Pia);
    const double t = (h.a.dot(e.mu) + h.b - 1.0) / s;
    if (t <= 0.0) return detail::finish(pair, e.mu, 0.0, SolverTag::closed_form, false);
    return detail::finish(pair, e.mu - t * Pia, 2.0 * t, SolverTag::closed_form, true);
  }
  if (pair.kind() == PairKind::halfspace_ellipsoid) {
    const Halfspace h = world_halfspace(pair.A);
    const WorldEllipsoid e = world_ellipsoid(pair.B);
    const Eigen::VectorXd Pia = e.P.llt().solve(h.a);
    const double rs = std::sqrt(h.a.dot(Pia));
    return detail::finish(pair, e.mu - Pia / rs, 0.5 * rs, SolverTag::closed_form, true);
  }
  throw InvalidArgument("pair is not ellipsoid-halfspace");
}

/// Ellipsoid-ellipsoid closed form. After Cholesky changes of variables the
/// problem becomes the distance from a point to a unit ball image, whose
/// multiplier is minus the smallest real eigenvalue of the 2n x 2n matrix
///   M = [ Pt   -I ;  -mt mt'   Pt ].
inline MinScalingSolution rimon_closed_form(const PrimitivePair& pair) {
  if (pair.kind() != PairKind::ellipsoid_ellipsoid) {
    throw InvalidArgument("rimon_closed_form needs two ellipsoids");
  }
  const int n = pair.dim();
  const WorldEllipsoid ea = world_ellipsoid(pair.A);
  const WorldEllipsoid eb = world_ellipsoid(pair.B);

  if ((ea.mu - eb.mu).dot(eb.P * (ea.mu - eb.mu)) <= 1.0) {
    return detail::finish(pair, ea.mu, 0.0, SolverTag::closed_form, false);
  }

  // y = La'(p - mu_A):  F_A = |y|^2,  F_B = (y - yb)' Pb (y - yb).
  const Eigen::LLT<Eigen::MatrixXd> lla(ea.P);
  if (lla.info() != Eigen::Success) throw InvalidArgument("ellipsoid A is not positive definite");
  const Eigen::MatrixXd La = lla.matrixL();
  const Eigen::VectorXd yb = La.transpose() * (eb.mu - ea.mu);
  Eigen::MatrixXd Pb = La.triangularView<Eigen::Lower>().solve(eb.P);
  Pb = La.triangularView<Eigen::Lower>().solve(Pb.transpose()).eval();
  Pb = 0.5 * (Pb + Pb.transpose());

  // v = Lb'(y - yb), |v| = 1:  (Pt + nu I) v = mt.
  const Eigen::LLT<Eigen::MatrixXd> llb(Pb);
  if (llb.info() != Eigen::Success) throw InvalidArgument("ellipsoid B is not positive definite");
  const Eigen::MatrixXd Lb = llb.matrixL();
  const Eigen::MatrixXd Lbinv =
      Lb.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd Pt = Lbinv * Lbinv.transpose();
  Pt = 0.5 * (Pt + Pt.transpose());
  const Eigen::VectorXd mt = -Lb.triangularView<Eigen::Lower>().solve(yb);

  Eigen::MatrixXd M(2 * n, 2 * n);
  M << Pt, -Eigen::MatrixXd::Identity(n, n), -mt * mt.transpose(), Pt;
  Eigen::EigenSolver<Eigen::MatrixXd> es(M, false);
  if (es.info() != Eigen::Success) throw SolverFailure("eigenvalue solver failed", 0.0);
  const Eigen::VectorXcd ev = es.eigenvalues();
  const double radius = ev.cwiseAbs().maxCoeff();
  double lmin = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (std::abs(ev(i).imag()) <= 1e-9 * radius) lmin = std::min(lmin, ev(i).real());
  }
  Diagnostics diag;
  if (!std::isfinite(lmin)) {
    diag.note("closed form: no real eigenvalue, using newton_kkt");
    MinScalingSolution s = newton_kkt(pair);
    s.diag.messages.insert(s.diag.messages.begin(), diag.messages.begin(), diag.messages.end());
    return s;
  }

  // Polish nu = -lmin on the secular equation mt'(Pt + nu)^-2 mt = 1 in the
  // eigenbasis of Pt; the QR estimate loses accuracy when |mt| is large.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ps(Pt);
  const Eigen::VectorXd pe = ps.eigenvalues();
  const Eigen::VectorXd ce = ps.eigenvectors().transpose() * mt;
  double nu = -lmin;
  const double floor_nu = -pe.minCoeff();
  for (int it = 0; it < 50; ++it) {
    // phi(nu)^(-1/2) - 1 is nearly linear in nu; Newton on it.
    const Eigen::ArrayXd den = pe.array() + nu;
    if (!(den.minCoeff() > 0.0)) break;
    const double phi = (ce.array().square() / den.square()).sum();
    const double dphi = -2.0 * (ce.array().square() / den.cube()).sum();
    const double f = 1.0 / std::sqrt(phi) - 1.0;
    const double df = -0.5 * std::pow(phi, -1.5) * dphi;
    double next = nu - f / df;
    if (!(next > floor_nu)) next = 0.5 * (nu + floor_nu);
    if (std::abs(next - nu) <= 4e-16 * std::max(1.0, std::abs(nu))) {
      nu = next;
      break;
    }
    nu = next;
  }
  const Eigen::MatrixXd shifted = Pt + nu * Eigen::MatrixXd::Identity(n, n);
  const Eigen::LLT<Eigen::MatrixXd> lls(shifted);
  if (lls.info() != Eigen::Success || !(pe.minCoeff() + nu > 1e-12 * std::max(1.0, pe.maxCoeff()))) {
    diag.note("closed form: shifted matrix near singular, using newton_kkt");
    MinScalingSolution s = newton_kkt(pair);
    s.diag.messages.insert(s.diag.messages.begin(), diag.messages.begin(), diag.messages.end());
    return s;
  }
  const Eigen::VectorXd v = lls.solve(mt);
  const Eigen::VectorXd y = yb + Lb.transpose().triangularView<Eigen::Upper>().solve(v);
  const Eigen::VectorXd p = ea.mu + La.transpose().triangularView<Eigen::Upper>().solve(y);

  // Multiplier from stationarity by least squares.
  const Eigen::VectorXd ga = 2.0 * ea.P * (p - ea.mu);
  const Eigen::VectorXd gb = 2.0 * eb.P * (p - eb.mu);
  const double lambda = -ga.dot(gb) / gb.squaredNorm();

  MinScalingSolution s = detail::finish(pair, p, lambda, SolverTag::closed_form, true);
  if (s.kkt_residual > kKktTol) {
    diag.note("closed form residual " + std::to_string(s.kkt_residual) + ", polishing with newton_kkt");
    try {
      MinScalingSolution polished = newton_kkt(pair, KktInit{p, lambda});
      if (polished.kkt_residual < s.kkt_residual) s = std::move(polished);
    } catch (const SolverFailure&) {
    }
  }
  s.diag.messages.insert(s.diag.messages.begin(), diag.messages.begin(), diag.messages.end());
  return s;
}

inline MinScalingSolution solve_min_scaling(const PrimitivePair& pair) {
  switch (pair.kind()) {
    case PairKind::ellipsoid_ellipsoid: return rimon_closed_form(pair);
    case PairKind::ellipsoid_halfspace:
    case PairKind::halfspace_ellipsoid: return ellipsoid_halfspace_closed_form(pair);
    case PairKind::ellipsoid_polytope:
    case PairKind::polytope_ellipsoid: return newton_kkt(pair);
  }
  throw InvalidArgument("unknown pair kind");
}

namespace detail {

/// Jets of F_A and F_B embedded in the pair variable z = [p; theta_A; theta_B].
struct PairJets {
  int n = 0, ta = 0, tb = 0, nz = 0;
  double fa = 0.0, fb = 0.0;
  Eigen::VectorXd ga, gb;
  Eigen::MatrixXd ha, hb;
  std::vector<double> Ta, Tb;

  double ta3(int a, int b, int c) const { return Ta[(a * nz + b) * nz + c]; }
  double tb3(int a, int b, int c) const { return Tb[(a * nz + b) * nz + c]; }
};

inline PairJets pair_jets(const PrimitivePair& pair, const Eigen::VectorXd& p, int order) {
  PairJets J;
  J.n = pair.dim();
  J.ta = pair.theta_a_size();
  J.tb = pair.theta_b_size();
  J.nz = J.n + J.ta + J.tb;
  const ScalingJet ja = eval_scaling(pair.A.shape, pair.A.frame, p, order);
  const ScalingJet jb = eval_scaling(pair.B.shape, pair.B.frame, p, order);
  J.fa = ja.value;
  J.fb = jb.value;

  auto embed = [&](const ScalingJet& j, int offset, Eigen::VectorXd& g, Eigen::MatrixXd& H,
                   std::vector<double>& T) {
    std::vector<int> map(j.nz());
    for (int i = 0; i < j.nz(); ++i) map[i] = i < J.n ? i : i - J.n + offset;
    g = Eigen::VectorXd::Zero(J.nz);
    for (int i = 0; i < j.nz(); ++i) g(map[i]) = j.grad(i);
    if (order < 2) return;
    H = Eigen::MatrixXd::Zero(J.nz, J.nz);
    for (int a = 0; a < j.nz(); ++a)
      for (int b = 0; b < j.nz(); ++b) H(map[a], map[b]) = j.hess(a, b);
    if (order < 3) return;
    T.assign(static_cast<std::size_t>(J.nz * J.nz * J.nz), 0.0);
    for (int a = 0; a < j.nz(); ++a)
      for (int b = 0; b < j.nz(); ++b)
        for (int c = 0; c < j.nz(); ++c)
          T[(map[a] * J.nz + map[b]) * J.nz + map[c]] = j.d3(a, b, c);
  };
  embed(ja, J.n, J.ga, J.ha, J.Ta);
  embed(jb, J.n + J.ta, J.gb, J.hb, J.Tb);
  return J;
}

}  // namespace detail

/// First-order (order = 1) or first- and second-order (order = 2)
/// sensitivities of alpha* at a solved pair.
inline AlphaSensitivity alpha_sensitivity(const PrimitivePair& pair, const MinScalingSolution& sol,
                                          int order = 2) {
  if (order != 1 && order != 2) throw InvalidArgument("sensitivity order must be 1 or 2");
  const detail::PairJets J = detail::pair_jets(pair, sol.p, order + 1);
  const int n = J.n, nt = J.ta + J.tb, nz = J.nz;
  const double lam = sol.lambda;

  AlphaSensitivity out;
  out.solution = sol;

  if (!sol.constraint_active) {
    // alpha* = min_p F_A(p, theta_A): only A's parameters matter.
    const Eigen::MatrixXd Hpp = J.ha.topLeftCorner(n, n);
    const Eigen::LLT<Eigen::MatrixXd> llt(Hpp);
    if (llt.info() != Eigen::Success) throw SingularSystem("unconstrained Hessian is singular");
    out.dp_dtheta = -llt.solve(J.ha.block(0, n, n, nt));
    out.dlambda_dtheta = Eigen::RowVectorXd::Zero(nt);
    out.grad = J.ga.tail(nt);
    if (order == 2) {
      out.hess = J.ha.bottomRightCorner(nt, nt) + J.ha.block(n, 0, nt, n) * out.dp_dtheta;
      out.hess_asymmetry = (out.hess - out.hess.transpose()).cwiseAbs().maxCoeff() /
                           std::max(1.0, out.hess.cwiseAbs().maxCoeff());
      out.hess = 0.5 * (out.hess + out.hess.transpose()).eval();
    }
    return out;
  }

  // N [dp; dlambda] = Omega
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(n + 1, n + 1);
  N.topLeftCorner(n, n) = J.ha.topLeftCorner(n, n) + lam * J.hb.topLeftCorner(n, n);
  N.topRightCorner(n, 1) = J.gb.head(n);
  N.bottomLeftCorner(1, n) = J.gb.head(n).transpose();
  Eigen::MatrixXd Omega(n + 1, nt);
  Omega.topRows(n) = -(J.ha.block(0, n, n, nt) + lam * J.hb.block(0, n, n, nt));
  Omega.bottomRows(1) = -J.gb.tail(nt).transpose();
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(N);
  if (!(lu.rcond() > 1e-14)) throw SingularSystem("KKT sensitivity matrix is singular");
  const Eigen::MatrixXd X = lu.solve(Omega);
  const Eigen::MatrixXd P = X.topRows(n);
  const Eigen::RowVectorXd L = X.bottomRows(1);
  out.dp_dtheta = P;
  out.dlambda_dtheta = L;
  out.grad = (J.ga.head(n).transpose() * P).transpose() + J.ga.tail(nt);
  if (order < 2) return out;

  // Lagrangian third derivative T = T_A + lambda T_B over z.
  auto T = [&](int a, int b, int c) { return J.ta3(a, b, c) + lam * J.tb3(a, b, c); };
  const Eigen::MatrixXd& HB = J.hb;
  const Eigen::MatrixXd& HA = J.ha;

  // D2P(i, j, k) = d2 p_i / dtheta_j dtheta_k
  std::vector<Eigen::MatrixXd> D2P(static_cast<std::size_t>(nt));
  for (int j = 0; j < nt; ++j) {
    const int Jz = n + j;
    Eigen::MatrixXd dN = Eigen::MatrixXd::Zero(n + 1, n + 1);
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        double s = T(a, b, Jz) + L(j) * HB(a, b);
        for (int c = 0; c < n; ++c) s += T(a, b, c) * P(c, j);
        dN(a, b) = s;
      }
      double s = HB(a, Jz);
      for (int c = 0; c < n; ++c) s += HB(a, c) * P(c, j);
      dN(a, n) = dN(n, a) = s;
    }
    Eigen::MatrixXd dOmega(n + 1, nt);
    for (int k = 0; k < nt; ++k) {
      const int Kz = n + k;
      for (int a = 0; a < n; ++a) {
        double s = T(a, Kz, Jz) + L(j) * HB(a, Kz);
        for (int c = 0; c < n; ++c) s += T(a, Kz, c) * P(c, j);
        dOmega(a, k) = -s;
      }
      double s = HB(Kz, Jz);
      for (int c = 0; c < n; ++c) s += HB(Kz, c) * P(c, j);
      dOmega(n, k) = -s;
    }
    D2P[j] = lu.solve(dOmega - dN * X).topRows(n);  // column k: d2p / dtheta_j dtheta_k
  }

  Eigen::MatrixXd H(nt, nt);
  const Eigen::MatrixXd Hpp = HA.topLeftCorner(n, n);
  const Eigen::MatrixXd Hpt = HA.block(0, n, n, nt);
  const Eigen::MatrixXd Htt = HA.bottomRightCorner(nt, nt);
  H = Htt + P.transpose() * Hpp * P + Hpt.transpose() * P + P.transpose() * Hpt;
  const Eigen::VectorXd gap = J.ga.head(n);
  for (int j = 0; j < nt; ++j)
    for (int k = 0; k < nt; ++k) H(j, k) += gap.dot(D2P[j].col(k));

  out.hess_asymmetry =
      (H - H.transpose()).cwiseAbs().maxCoeff() / std::max(1.0, H.cwiseAbs().maxCoeff());
  if (out.hess_asymmetry > 1e-9) {
    out.solution.diag.note("alpha Hessian asymmetry " + std::to_string(out.hess_asymmetry));
  }
  out.hess = 0.5 * (H + H.transpose());
  (void)nz;
  return out;
}

inline Eigen::VectorXd alpha_gradient(const PrimitivePair& pair, const MinScalingSolution& sol) {
  return alpha_sensitivity(pair, sol, 1).grad;
}

inline Eigen::MatrixXd alpha_hessian(const PrimitivePair& pair, const MinScalingSolution& sol) {
  return alpha_sensitivity(pair, sol, 2).hess;
}

/// Solve and differentiate in one call.
inline AlphaSensitivity compute_alpha(const PrimitivePair& pair, int order = 2) {
  return alpha_sensitivity(pair, solve_min_scaling(pair), order);
}

}  // namespace scalecbf
