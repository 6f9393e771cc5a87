#include <catch_amalgamated.hpp>

#include <numbers>

#include "mvee_oracle.hpp"
#include "scalecbf/mvee.hpp"
#include "support.hpp"

using namespace scalecbf;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("square vertices give the circumscribed circle") {
  std::vector<VectorXd> pts = {Eigen::Vector2d(1, 1), Eigen::Vector2d(-1, 1), Eigen::Vector2d(-1, -1),
                               Eigen::Vector2d(1, -1)};
  const MveeResult r = mvee(pts);
  CHECK((r.P - 0.5 * MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(r.mu.norm() < 1e-8);
  CHECK((r.D * r.D - r.P).norm() < 1e-12);
  CHECK((r.mu + r.D.inverse() * r.d).norm() < 1e-12);
}

TEST_CASE("simplex MVEE matches the grid oracle") {
  std::vector<VectorXd> pts = {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)};
  const MveeResult r = mvee(pts);
  CHECK(r.residual <= 1e-9);
  const double area = std::numbers::pi / std::sqrt(r.P.determinant());
  const double oracle = mvee_oracle::min_area(pts);
  CHECK(std::abs(area - oracle) <= 1e-6 * oracle);
  // The triangle's Steiner circumellipse: centroid centre, area 4 pi / (3 sqrt 3) * |T|.
  CHECK(r.mu.isApprox(Eigen::Vector2d(1.0 / 3, 1.0 / 3), 1e-8));
  CHECK(area == Catch::Approx(4 * std::numbers::pi / (3 * std::sqrt(3.0)) * 0.5).epsilon(1e-8));
}

TEST_CASE("random 2D point sets match the grid oracle") {
  testsupport::Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    const int m = 5 + t;
    std::vector<VectorXd> pts;
    for (int i = 0; i < m; ++i) pts.push_back(Eigen::Vector2d(rng.uniform(-2, 2), rng.uniform(-1, 1)));
    const MveeResult r = mvee(pts);
    CHECK(r.residual <= 1e-9);
    for (const auto& p : pts) CHECK((r.D * p + r.d).norm() <= 1 + 1e-9);
    const double area = std::numbers::pi / std::sqrt(r.P.determinant());
    const double oracle = mvee_oracle::min_area(pts);
    INFO("set " << t << " area " << area << " oracle " << oracle);
    CHECK(std::abs(area - oracle) <= 1e-6 * oracle);
  }
}

TEST_CASE("3D point sets are enclosed") {
  testsupport::Rng rng(32);
  std::vector<VectorXd> pts;
  for (int i = 0; i < 30; ++i) pts.push_back(rng.uniform_vec(3, -1, 1));
  const MveeResult r = mvee(pts);
  CHECK(r.residual <= 1e-9);
  CHECK(r.gap <= 1e-10);
}

TEST_CASE("degenerate point sets are rejected") {
  std::vector<VectorXd> same(5, Eigen::Vector2d(0.3, -0.2));
  CHECK_THROWS_AS(mvee(same), DegenerateInput);
  std::vector<VectorXd> line = {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1), Eigen::Vector2d(2, 2),
                                Eigen::Vector2d(-3, -3)};
  CHECK_THROWS_AS(mvee(line), DegenerateInput);
  CHECK_THROWS_AS(mvee({Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0)}), DegenerateInput);
}
