#include <doctest.h>

#include <cmath>
#include <random>

#include "semmap/errors.hpp"
#include "semmap/gaussian_filter.hpp"

using namespace semmap;

namespace {

Eigen::MatrixXd random_points(std::mt19937& rng, int n, int d, double side) {
  std::uniform_real_distribution<double> u(0.0, side);
  Eigen::MatrixXd f(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) f(i, k) = u(rng);
  return f;
}

Eigen::MatrixXd random_values(std::mt19937& rng, int n, int l) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd v(n, l);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < l; ++k) v(i, k) = u(rng);
  return v;
}

}  // namespace

TEST_CASE("exact filter is the direct Gaussian sum") {
  Eigen::MatrixXd f(3, 2);
  f << 0, 0, 1, 0, 0, 2;
  Eigen::MatrixXd v(3, 1);
  v << 1, 2, 3;
  const ExactGaussianFilter ex(f);
  const Eigen::MatrixXd out = ex.filter(v);
  CHECK(out(0, 0) == doctest::Approx(1 + 2 * std::exp(-0.5) + 3 * std::exp(-2.0)).epsilon(1e-14));
  CHECK(out(1, 0) == doctest::Approx(std::exp(-0.5) + 2 + 3 * std::exp(-2.5)).epsilon(1e-14));
  CHECK_THROWS_AS(ex.filter(Eigen::MatrixXd::Ones(2, 1)), FilterShapeError);
}

TEST_CASE("single point lattice") {
  for (int d = 1; d <= 6; ++d) {
    const auto lat = PermutohedralLattice::build(Eigen::MatrixXd::Constant(1, d, 0.37));
    CHECK(lat.vertex_count() == static_cast<std::size_t>(d + 1));
    const auto w = lat.weights_of(0);
    REQUIRE(w.size() == static_cast<std::size_t>(d + 1));
    double sum = 0.0;
    for (double x : w) {
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    // A lone point filters to itself: only the exact self term remains.
    CHECK(lat.filter(Eigen::MatrixXd::Constant(1, 2, 4.0))(0, 1) == doctest::Approx(4.0));
  }
}

TEST_CASE("barycentric weights of every point sum to one") {
  std::mt19937 rng(2);
  for (int d : {2, 3, 5}) {
    const auto lat = PermutohedralLattice::build(random_points(rng, 200, d, 3.0));
    for (Eigen::Index i = 0; i < 200; ++i) {
      double sum = 0.0;
      for (double w : lat.weights_of(i)) {
        CHECK(w >= -1e-12);
        sum += w;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("identical rows and rebuilds are deterministic") {
  std::mt19937 rng(4);
  Eigen::MatrixXd f = random_points(rng, 50, 5, 2.0);
  f.row(7) = f.row(31);
  const auto a = PermutohedralLattice::build(f);
  const auto b = PermutohedralLattice::build(f);
  CHECK(a.vertices_of(7) == a.vertices_of(31));
  CHECK(a.weights_of(7) == a.weights_of(31));
  const Eigen::MatrixXd v = random_values(rng, 50, 3);
  CHECK(a.filter(v) == b.filter(v));
  CHECK(a.vertex_count() == b.vertex_count());
  CHECK(a.gain() == b.gain());
}

TEST_CASE("distant points do not interact") {
  for (int d : {2, 5}) {
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(2, d);
    f(1, 0) = 10.0;
    Eigen::MatrixXd v(2, 1);
    v << 1, 0;
    for (FilterBackend backend : {FilterBackend::Lattice, FilterBackend::ExactSum}) {
      const Eigen::MatrixXd out = make_filter(backend, f)->filter(v);
      CHECK(std::abs(out(1, 0)) <= 1e-3 * std::abs(out(0, 0)));
    }
  }
}

TEST_CASE("constant columns scale linearly and normalize to constants") {
  std::mt19937 rng(6);
  const Eigen::MatrixXd f = random_points(rng, 120, 3, 2.0);
  const auto lat = PermutohedralLattice::build(f);
  const Eigen::MatrixXd ones = lat.filter(Eigen::MatrixXd::Ones(120, 1));
  const Eigen::MatrixXd c = lat.filter(Eigen::MatrixXd::Constant(120, 1, 2.5));
  CHECK((ones.array() > 0).all());
  const Eigen::ArrayXd ratio = c.array() / ones.array();
  CHECK((ratio - 2.5).abs().maxCoeff() <= 1e-4 * 2.5);
}

TEST_CASE("lattice is linear, symmetric and non-negative") {
  std::mt19937 rng(8);
  for (int d : {2, 5}) {
    const int n = 80;
    const auto lat = PermutohedralLattice::build(random_points(rng, n, d, 2.0));
    const Eigen::MatrixXd x = random_values(rng, n, 2), y = random_values(rng, n, 2);
    const Eigen::MatrixXd lhs = lat.filter(1.5 * x - 0.25 * y);
    const Eigen::MatrixXd rhs = 1.5 * lat.filter(x) - 0.25 * lat.filter(y);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-6 * rhs.cwiseAbs().maxCoeff());

    const Eigen::MatrixXd k = lat.filter(Eigen::MatrixXd::Identity(n, n));
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() <= 1e-3);
    CHECK(k.minCoeff() >= -1e-9);
    CHECK(lat.filter(x).minCoeff() >= -1e-9);
  }
}

TEST_CASE("exact filter is symmetric") {
  std::mt19937 rng(9);
  const ExactGaussianFilter ex(random_points(rng, 40, 4, 2.0));
  const Eigen::MatrixXd k = ex.filter(Eigen::MatrixXd::Identity(40, 40));
  CHECK((k - k.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("input validation") {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(3, 2);
  f(1, 1) = NAN;
  CHECK_THROWS_AS(PermutohedralLattice::build(f), FeatureError);
  CHECK_THROWS_AS(PermutohedralLattice::build(Eigen::MatrixXd(0, 2)), FeatureError);
  const auto lat = PermutohedralLattice::build(Eigen::MatrixXd::Zero(3, 2));
  CHECK_THROWS_AS(lat.filter(Eigen::MatrixXd::Ones(4, 1)), FilterShapeError);
}

TEST_CASE("moderate-density lattice output tracks exact sums in 2D") {
  // Dense 2D clouds are the regime where the lattice is accurate.
  std::mt19937 rng(10);
  const Eigen::MatrixXd f = random_points(rng, 400, 2, 4.0);
  const Eigen::MatrixXd v = random_values(rng, 400, 2);
  const Eigen::MatrixXd approx = PermutohedralLattice::build(f).filter(v);
  const Eigen::MatrixXd exact = ExactGaussianFilter(f).filter(v);
  const double rel = ((approx - exact).array() / exact.array()).abs().maxCoeff();
  MESSAGE("2D max relative error " << rel);
  CHECK(rel <= 0.25);
}
