#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "semmap/core_types.hpp"
#include "semmap/errors.hpp"

using namespace semmap;

namespace {
LabelDistribution dist(std::vector<double> v) { return normalize(v); }
}  // namespace

TEST_CASE("normalize scales to unit sum") {
  const auto a = dist({2, 2});
  CHECK(a[0] == doctest::Approx(0.5));
  CHECK(a[1] == doctest::Approx(0.5));

  const auto b = dist({1, 0, 0});
  CHECK(b[0] == 1.0);
  CHECK(b[1] == 0.0);
  CHECK(b[2] == 0.0);

  const auto c = dist({0.36, 0.16});
  CHECK(c[0] == doctest::Approx(0.36 / 0.52).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(0.16 / 0.52).epsilon(1e-12));
}

TEST_CASE("normalize rejects zero, negative and non-finite input") {
  CHECK_THROWS_AS(dist({0, 0}), InvalidDistribution);
  CHECK_THROWS_AS(dist({1, -0.1}), InvalidDistribution);
  CHECK_THROWS_AS(dist({}), InvalidDistribution);
  CHECK_THROWS_AS(dist({1, NAN}), InvalidDistribution);
}

TEST_CASE("normalize is idempotent and scale invariant") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(1 + t % 6);
    for (double& x : v) x = u(rng);
    v[0] += 0.01;
    const auto once = normalize(v);
    const auto twice = normalize(once.probs());
    std::vector<double> scaled = v;
    for (double& x : scaled) x *= 37.5;
    const auto s = normalize(scaled);
    double sum = 0.0;
    for (std::size_t l = 0; l < v.size(); ++l) {
      CHECK(std::abs(once[l] - twice[l]) <= 1e-9);
      CHECK(std::abs(once[l] - s[l]) <= 1e-9);
      sum += once[l];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("neg_log with the probability floor") {
  CHECK(neg_log(dist({1.0}))[0] == 0.0);
  const auto half = neg_log(dist({0.5, 0.5}));
  CHECK(half[0] == doctest::Approx(std::log(2.0)));
  CHECK(half[1] == doctest::Approx(0.693147).epsilon(1e-5));
  const auto clamped = neg_log(dist({1.0, 0.0}));
  CHECK(clamped[0] == 0.0);
  CHECK(clamped[1] == doctest::Approx(-std::log(1e-8)));
  CHECK(clamped[1] == doctest::Approx(18.42).epsilon(1e-3));
}

TEST_CASE("neg_log inverts exp of negated costs") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> costs(4);
    for (double& c : costs) c = u(rng);
    double z = 0.0;
    for (double c : costs) z += std::exp(-c);
    const double lz = std::log(z);
    for (double& c : costs) c += lz;  // induced distribution sums to 1
    std::vector<double> probs;
    for (double c : costs) probs.push_back(std::exp(-c));
    const auto back = neg_log(normalize(probs));
    for (int l = 0; l < 4; ++l) CHECK(std::abs(back[l] - costs[l]) <= 1e-6);
  }
}

TEST_CASE("uniform distribution and argmax") {
  const auto u = uniform_distribution(4);
  for (int l = 0; l < 4; ++l) CHECK(u[l] == doctest::Approx(0.25));
  CHECK(dist({0.1, 0.7, 0.2}).argmax() == 1);
  CHECK(dist({0.5, 0.5}).argmax() == 0);
}

TEST_CASE("pose validation and transforms") {
  Pose p;
  CHECK_NOTHROW(p.validate());
  p.rotation << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  p.translation = {1, 2, 3};
  CHECK_NOTHROW(p.validate());
  const Eigen::Vector3d x(0.3, -0.2, 4.0);
  CHECK((p.to_camera(p.to_world(x)) - x).norm() < 1e-12);
  CHECK((p.to_world(Eigen::Vector3d(0, 0, 1)) - Eigen::Vector3d(2, 2, 3)).norm() < 1e-12);

  Pose mirrored;
  mirrored.rotation = Eigen::Vector3d(1, 1, -1).asDiagonal();
  CHECK_THROWS_AS(mirrored.validate(), PoseError);
  Pose skew;
  skew.rotation(0, 1) = 0.1;
  CHECK_THROWS_AS(skew.validate(), PoseError);
  Pose nan;
  nan.translation.x() = NAN;
  CHECK_THROWS_AS(nan.validate(), PoseError);
}

TEST_CASE("camera intrinsics") {
  CameraIntrinsics k{100, 100, 79.5, 59.5, 0.5, 160, 120};
  CHECK_NOTHROW(k.validate());
  const Eigen::Vector3d p = k.back_project(10.0, 20.0, 5.0);
  const Eigen::Vector2d uv = k.project(p);
  CHECK(uv.x() == doctest::Approx(10.0));
  CHECK(uv.y() == doctest::Approx(20.0));
  CHECK(p.z() == 5.0);
  CHECK(k.disparity_to_depth(10.0) == doctest::Approx(5.0));

  CameraIntrinsics bad = k;
  bad.cx = 160;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = k;
  bad.baseline = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("kernel params and kernel value") {
  KernelParams k;
  CHECK_NOTHROW(k.validate());
  k.w1 = k.w2 = 0;  // allowed: no pairwise term
  CHECK_NOTHROW(k.validate());
  CHECK_FALSE(k.active());
  k.w2 = -1;
  CHECK_THROWS_AS(k.validate(), ConfigError);
  k = KernelParams{};
  k.theta_beta = 0;
  CHECK_THROWS_AS(k.validate(), ConfigError);

  // Identical features: both kernels evaluate to 1.
  FeatureVector a{Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(10, 20, 30)};
  const KernelParams d = KernelParams::defaults_3d();
  CHECK(kernel_value(d, a, a) == doctest::Approx(d.w1 + d.w2));

  FeatureVector b{Eigen::Vector3d(0.5, 0, 0), Eigen::Vector3d(20, 20, 30)};
  const double expected = d.w1 * std::exp(-0.25 / (2 * 0.25) - 100.0 / (2 * 100.0)) + d.w2 * std::exp(-0.25 / (2 * 0.09));
  CHECK(kernel_value(d, a, b) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("softmax of negated costs") {
  Eigen::VectorXd c(2);
  c << 0.0, std::log(3.0);
  const Eigen::VectorXd q = softmax_neg(c);
  CHECK(q[0] == doctest::Approx(0.75));
  CHECK(q[1] == doctest::Approx(0.25));
  c << 1000.0, 0.0;
  const Eigen::VectorXd r = softmax_neg(c);
  CHECK(r[1] == doctest::Approx(1.0));
  CHECK(std::isfinite(r[0]));
}

TEST_CASE("feature set validation") {
  FeatureSet f;
  f.positions = Eigen::MatrixXd::Zero(3, 2);
  f.colors = Eigen::MatrixXd::Zero(3, 3);
  CHECK_NOTHROW(f.validate());
  f.colors = Eigen::MatrixXd::Zero(2, 3);
  CHECK_THROWS_AS(f.validate(), FeatureError);
  f.colors = Eigen::MatrixXd::Zero(3, 3);
  f.positions(1, 1) = INFINITY;
  CHECK_THROWS_AS(f.validate(), FeatureError);
}
