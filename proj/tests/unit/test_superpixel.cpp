#include <doctest.h>

#include <random>
#include <set>

#include "semmap/errors.hpp"
#include "semmap/superpixel.hpp"

using namespace semmap;

namespace {

RgbImage noise_image(int w, int h, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  RgbImage img(w, h);
  // Smooth blobs plus noise so SLIC has structure to follow.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double base = 127 + 100 * std::sin(0.05 * x * (c + 1)) * std::cos(0.07 * y);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(base + (u(rng) - 128) * 0.1, 0.0, 255.0));
      }
  return img;
}

FeatureSet pixel_features(const std::vector<Eigen::Vector2d>& pos, const std::vector<Eigen::Vector3d>& col) {
  FeatureSet f;
  f.positions.resize(static_cast<Eigen::Index>(pos.size()), 2);
  f.colors.resize(static_cast<Eigen::Index>(pos.size()), 3);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    f.positions.row(static_cast<Eigen::Index>(i)) = pos[i].transpose();
    f.colors.row(static_cast<Eigen::Index>(i)) = col[i].transpose();
  }
  return f;
}

}  // namespace

TEST_CASE("CIELAB conversion") {
  const Eigen::Vector3d white = rgb_to_lab(255, 255, 255);
  CHECK(white[0] == doctest::Approx(100.0).epsilon(1e-3));
  CHECK(std::abs(white[1]) < 1e-2);
  CHECK(std::abs(white[2]) < 1e-2);
  const Eigen::Vector3d red = rgb_to_lab(255, 0, 0);
  CHECK(red[0] == doctest::Approx(53.24).epsilon(1e-3));
  CHECK(red[1] == doctest::Approx(80.09).epsilon(1e-3));
  CHECK(red[2] == doctest::Approx(67.20).epsilon(1e-3));
  CHECK(rgb_to_lab(0, 0, 0).norm() < 1e-9);
}

TEST_CASE("uniform image splits into the seeding grid") {
  const SuperpixelMap sp = slic(RgbImage(32, 32, 90), {4, 10.0, 10});
  CHECK(sp.count == 4);
  CHECK(sp.sizes == std::vector<std::int32_t>{256, 256, 256, 256});
  CHECK(sp.at(0, 0) != sp.at(31, 0));
  CHECK(sp.at(0, 0) != sp.at(0, 31));
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) CHECK(sp.at(x, y) == sp.at(0, 0));
}

TEST_CASE("two-tone image: superpixels never straddle the color edge") {
  RgbImage img(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const bool left = x < 13;  // deliberately off the seeding grid
      img.at(x, y, 0) = left ? 220 : 20;
      img.at(x, y, 1) = left ? 30 : 200;
      img.at(x, y, 2) = 40;
    }
  const SuperpixelMap sp = slic(img, {4, 10.0, 10});
  std::vector<std::set<bool>> sides(sp.count);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) sides[sp.at(x, y)].insert(x < 13);
  for (const auto& s : sides) CHECK(s.size() == 1);
}

TEST_CASE("KITTI-sized image gives roughly the requested count") {
  const SuperpixelMap sp = slic(noise_image(1241, 376, 1), {150, 10.0, 10});
  MESSAGE("superpixels: " << sp.count);
  CHECK(sp.count >= 75);
  CHECK(sp.count <= 300);
  CHECK(is_four_connected(sp));
}

TEST_CASE("superpixel map invariants and determinism") {
  for (std::uint32_t seed : {3u, 4u, 5u}) {
    const RgbImage img = noise_image(97, 61, seed);
    const SuperpixelMap a = slic(img, {40, 10.0, 10});
    const SuperpixelMap b = slic(img, {40, 10.0, 10});
    CHECK(a == b);
    CHECK(is_four_connected(a));
    CHECK(a.count >= 20);
    CHECK(a.count <= 80);
    std::vector<int> seen(a.count, 0);
    for (auto l : a.labels) {
      REQUIRE(l >= 0);
      REQUIRE(l < a.count);
      seen[l] = 1;
    }
    CHECK(std::count(seen.begin(), seen.end(), 1) == a.count);
    std::int64_t total = 0;
    for (auto s : a.sizes) total += s;
    CHECK(total == 97 * 61);
  }
}

TEST_CASE("slic argument errors") {
  CHECK_THROWS_AS(slic(RgbImage{}, {}), FrameShapeError);
  CHECK_THROWS_AS(slic(RgbImage(4, 4), {17, 10.0, 10}), SeedError);
  CHECK_THROWS_AS(slic(RgbImage(4, 4), {0, 10.0, 10}), SeedError);
  CHECK_THROWS_AS(slic(RgbImage(4, 4), {4, -1.0, 10}), ConfigError);
  CHECK(slic(RgbImage(4, 4), {16, 10.0, 10}).count == 16);
}

TEST_CASE("2D cliques take member means") {
  SuperpixelMap sp;
  sp.width = 2;
  sp.height = 1;
  sp.count = 1;
  sp.labels = {0, 0};
  const FeatureSet f = pixel_features({{0, 0}, {2, 0}}, {{10, 0, 0}, {30, 0, 0}});
  Eigen::MatrixXd u(2, 2);
  u << 0, 2, 2, 0;
  const CliqueSet c = build_cliques_2d(sp, f, u);
  REQUIRE(c.size() == 1);
  CHECK(c.members[0] == std::vector<std::int32_t>{0, 1});
  CHECK(c.features.positions(0, 0) == doctest::Approx(1.0));
  CHECK(c.features.positions(0, 1) == doctest::Approx(0.0));
  CHECK(c.features.colors(0, 0) == doctest::Approx(20.0));
  CHECK(c.unaries(0, 0) == doctest::Approx(1.0));
  CHECK(c.unaries(0, 1) == doctest::Approx(1.0));
  CHECK_NOTHROW(c.validate(2, 2));
}

TEST_CASE("cliques partition their nodes and match recomputed means") {
  std::mt19937 rng(12);
  const RgbImage img = noise_image(40, 30, 9);
  const SuperpixelMap sp = slic(img, {12, 10.0, 10});
  const int n = 40 * 30;
  FeatureSet f;
  f.positions.resize(n, 2);
  f.colors.resize(n, 3);
  Eigen::MatrixXd u = Eigen::MatrixXd::Random(n, 3).cwiseAbs();
  for (int p = 0; p < n; ++p) {
    f.positions.row(p) << p % 40, p / 40;
    for (int c = 0; c < 3; ++c) f.colors(p, c) = img[3 * p + c];
  }
  const CliqueSet cs = build_cliques_2d(sp, f, u);
  CHECK(static_cast<int>(cs.size()) == sp.count);
  std::size_t members = 0;
  for (std::size_t c = 0; c < cs.size(); ++c) {
    members += cs.members[c].size();
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(3);
    for (auto i : cs.members[c]) {
      CHECK(cs.node_to_clique[i] == static_cast<std::int32_t>(c));
      mean += f.colors.row(i);
    }
    mean /= static_cast<double>(cs.members[c].size());
    CHECK((mean - cs.features.colors.row(static_cast<Eigen::Index>(c))).cwiseAbs().maxCoeff() <= 1e-6);
  }
  CHECK(members == static_cast<std::size_t>(n));
}

TEST_CASE("clique set validation") {
  CliqueSet cs = CliqueSet::none(3, 2);
  CHECK(cs.empty());
  CHECK_NOTHROW(cs.validate(3, 2));
  CHECK_THROWS_AS(cs.validate(4, 2), ShapeError);
}

namespace {

struct MicroScene {
  GridConfig config;
  std::optional<ScrollGrid> grid;
  CameraIntrinsics k{1000.0, 1000.0, 1.0, 0.5, 0.5, 2, 2};
  Pose pose;
  std::vector<std::size_t> slots;
  FeatureSet features;
  Eigen::MatrixXd unaries = Eigen::MatrixXd::Zero(1, 2);

  MicroScene() {
    config.dims = {8, 8, 8};
    config.resolution = 1.0;
    grid.emplace(config);
    pose.translation = {4.5, 4.5, 0.5};
    slots = {grid->global_to_cell({4, 4, 3})->storage};
    features.positions = Eigen::MatrixXd::Zero(1, 3);
    features.colors = Eigen::MatrixXd::Zero(1, 3);
  }
  SuperpixelMap sp(std::vector<std::int32_t> labels) const {
    SuperpixelMap m;
    m.width = m.height = 2;
    m.count = 2;
    m.labels = std::move(labels);
    return m;
  }
};

}  // namespace

TEST_CASE("3D cliques: majority claim with lowest-id tie break") {
  MicroScene s;
  const DepthImage depth(2, 2, 3.0f);  // all four pixels land in cell (4,4,3)
  SUBCASE("no valid depth leaves the cell clique-less") {
    const CliqueSet c = build_cliques_3d(s.sp({0, 0, 0, 1}), DepthImage(2, 2, NAN), MaskImage{}, s.pose, s.k, *s.grid,
                                         s.slots, s.features, s.unaries);
    CHECK(c.empty());
    CHECK(c.node_to_clique[0] == -1);
  }
  SUBCASE("3 to 1 for the lower id") {
    const CliqueSet c = build_cliques_3d(s.sp({0, 0, 0, 1}), depth, MaskImage{}, s.pose, s.k, *s.grid, s.slots,
                                         s.features, s.unaries);
    REQUIRE(c.size() == 1);
    CHECK(c.source_segment[0] == 0);
  }
  SUBCASE("3 to 1 for the higher id") {
    const CliqueSet c = build_cliques_3d(s.sp({1, 0, 1, 1}), depth, MaskImage{}, s.pose, s.k, *s.grid, s.slots,
                                         s.features, s.unaries);
    REQUIRE(c.size() == 1);
    CHECK(c.source_segment[0] == 1);
  }
  SUBCASE("ties go to the lowest id") {
    const CliqueSet c = build_cliques_3d(s.sp({1, 0, 0, 1}), depth, MaskImage{}, s.pose, s.k, *s.grid, s.slots,
                                         s.features, s.unaries);
    CHECK(c.source_segment[0] == 0);
  }
  SUBCASE("sky pixels do not claim") {
    MaskImage sky(2, 2, 0);
    sky[1] = sky[2] = 1;  // pixels 0 and 3 remain, both in segment 1
    const CliqueSet c = build_cliques_3d(s.sp({1, 0, 0, 1}), depth, sky, s.pose, s.k, *s.grid, s.slots, s.features,
                                         s.unaries);
    CHECK(c.source_segment[0] == 1);
  }
  SUBCASE("camera outside the box is a consistency error") {
    Pose far = s.pose;
    far.translation.x() = 100.0;
    CHECK_THROWS_AS(build_cliques_3d(s.sp({0, 0, 0, 0}), depth, MaskImage{}, far, s.k, *s.grid, s.slots, s.features,
                                     s.unaries),
                    ConsistencyError);
  }
}
