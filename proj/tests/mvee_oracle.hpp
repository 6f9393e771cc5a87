#pragma once

// Brute-force oracle for the minimum-area enclosing ellipse in the plane.
//
// Ellipses of unit-determinant shape S = R diag(e^r, e^-r) R' are scanned on
// a grid over (angle, r). For a fixed shape the best centre and radius come
// from the minimum enclosing circle of the points mapped by S^(1/2), so the
// area is pi * rho^2. The grid is then refined by a local grid that moves
// to its best cell and only shrinks once the centre is already best, and
// finally polished by Nelder-Mead restarts.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace mvee_oracle {

struct Circle {
  Eigen::Vector2d c{0, 0};
  double r2 = -1.0;
  bool contains(const Eigen::Vector2d& p) const { return (p - c).squaredNorm() <= r2 * (1 + 1e-14) + 1e-300; }
};

inline Circle from2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  Circle c;
  c.c = 0.5 * (a + b);
  c.r2 = (a - c.c).squaredNorm();
  return c;
}

inline Circle from3(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  const Eigen::Vector2d ba = b - a, ca = c - a;
  const double d = 2 * (ba.x() * ca.y() - ba.y() * ca.x());
  if (std::abs(d) < 1e-300) {
    Circle best = from2(a, b);
    for (const Circle& k : {from2(a, c), from2(b, c)})
      if (k.r2 > best.r2) best = k;
    return best;
  }
  const double b2 = ba.squaredNorm(), c2 = ca.squaredNorm();
  const Eigen::Vector2d off((ca.y() * b2 - ba.y() * c2) / d, (ba.x() * c2 - ca.x() * b2) / d);
  Circle k;
  k.c = a + off;
  k.r2 = off.squaredNorm();
  return k;
}

/// Welzl-style incremental minimum enclosing circle (points in fixed order).
inline Circle min_circle(const std::vector<Eigen::Vector2d>& p) {
  Circle c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (c.contains(p[i])) continue;
    c = Circle{p[i], 0.0};
    for (std::size_t j = 0; j < i; ++j) {
      if (c.contains(p[j])) continue;
      c = from2(p[i], p[j]);
      for (std::size_t k = 0; k < j; ++k)
        if (!c.contains(p[k])) c = from3(p[i], p[j], p[k]);
    }
  }
  return c;
}

inline double area_for(const std::vector<Eigen::VectorXd>& pts, double ang, double r) {
  const double ca = std::cos(ang), sa = std::sin(ang);
  Eigen::Matrix2d R;
  R << ca, -sa, sa, ca;
  const Eigen::Matrix2d L = Eigen::Vector2d(std::exp(r / 2), std::exp(-r / 2)).asDiagonal() * R.transpose();
  std::vector<Eigen::Vector2d> q;
  q.reserve(pts.size());
  for (const auto& p : pts) q.push_back(L * Eigen::Vector2d(p(0), p(1)));
  return std::numbers::pi * min_circle(q).r2;
}

inline double min_area(const std::vector<Eigen::VectorXd>& pts, double r_max = 4.0) {
  double best = std::numeric_limits<double>::infinity(), ba = 0, br = 0;
  const int G = 240;
  for (int i = 0; i < G; ++i) {
    for (int j = 0; j <= G; ++j) {
      const double ang = std::numbers::pi * i / G;
      const double r = -r_max + 2 * r_max * j / G;
      const double a = area_for(pts, ang, r);
      if (a < best) best = a, ba = ang, br = r;
    }
  }
  double da = std::numbers::pi / G, dr = 2 * r_max / G;
  while (da > 1e-13) {
    const int Z = 30;
    double na = ba, nr = br;
    for (int i = -Z; i <= Z; ++i)
      for (int j = -Z; j <= Z; ++j) {
        const double ang = ba + da * i / Z, r = br + dr * j / Z;
        const double a = area_for(pts, ang, r);
        if (a < best) best = a, na = ang, nr = r;
      }
    if (na == ba && nr == br) {
      da *= 0.5;
      dr *= 0.5;
    }
    ba = na;
    br = nr;
  }
  // Nelder-Mead restarts with rotated simplices to escape kinked valleys.
  for (int restart = 0; restart < 12; ++restart) {
    const double rot = 0.37 * restart, size = 1e-3;
    Eigen::Vector2d x[3];
    double f[3];
    for (int k = 0; k < 3; ++k) {
      const double a = rot + 2 * std::numbers::pi * k / 3;
      x[k] = Eigen::Vector2d(ba, br) + size * Eigen::Vector2d(std::cos(a), std::sin(a));
      f[k] = area_for(pts, x[k](0), x[k](1));
    }
    for (int it = 0; it < 2000; ++it) {
      int order[3] = {0, 1, 2};
      std::sort(order, order + 3, [&](int i, int j) { return f[i] < f[j]; });
      const int lo = order[0], mid = order[1], hi = order[2];
      if ((x[hi] - x[lo]).norm() < 1e-14) break;
      const Eigen::Vector2d c = 0.5 * (x[lo] + x[mid]);
      const Eigen::Vector2d xr = c + (c - x[hi]);
      const double fr = area_for(pts, xr(0), xr(1));
      if (fr < f[lo]) {
        const Eigen::Vector2d xe = c + 2 * (c - x[hi]);
        const double fe = area_for(pts, xe(0), xe(1));
        if (fe < fr) x[hi] = xe, f[hi] = fe;
        else x[hi] = xr, f[hi] = fr;
      } else if (fr < f[mid]) {
        x[hi] = xr, f[hi] = fr;
      } else {
        const Eigen::Vector2d xc = c + 0.5 * (x[hi] - c);
        const double fc = area_for(pts, xc(0), xc(1));
        if (fc < f[hi]) {
          x[hi] = xc, f[hi] = fc;
        } else {
          for (int k : {mid, hi}) {
            x[k] = x[lo] + 0.5 * (x[k] - x[lo]);
            f[k] = area_for(pts, x[k](0), x[k](1));
          }
        }
      }
    }
    for (int k = 0; k < 3; ++k)
      if (f[k] < best) best = f[k], ba = x[k](0), br = x[k](1);
  }
  return best;
}

}  // namespace mvee_oracle
