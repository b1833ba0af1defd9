#include "semmap/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

namespace semmap::synth {
namespace {

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Observed label is the truth, or with probability `flip_rate` a uniformly
// drawn other label. The observed label gets 0.6, the rest share 0.4.
void noisy_unary(UnaryMap& map, std::size_t pixel, int truth, double flip_rate, std::mt19937& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  int observed = truth;
  if (coin(rng) < flip_rate) {
    std::uniform_int_distribution<int> other(0, map.labels - 2);
    observed = other(rng);
    if (observed >= truth) ++observed;
  }
  const float rest = static_cast<float>(0.4 / (map.labels - 1));
  for (int l = 0; l < map.labels; ++l) map.probs[pixel * map.labels + l] = l == observed ? 0.6f : rest;
}

}  // namespace

Scene2d make_three_region(std::uint32_t seed, int size, double flip_rate) {
  constexpr int kLabels = 3;
  static const double colors[kLabels][3] = {{190, 170, 120}, {60, 150, 70}, {70, 90, 190}};
  std::mt19937 rng(seed);
  std::normal_distribution<double> noise(0.0, 15.0);

  Scene2d s;
  s.image = RgbImage(size, size);
  s.truth = LabelImage(size, size);
  s.unary.width = s.unary.height = size;
  s.unary.labels = kLabels;
  s.unary.probs.assign(static_cast<std::size_t>(size) * size * kLabels, 0.0f);
  const double cx = 0.33 * size, cy = 0.38 * size, r = 0.22 * size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int label = 0;
      if (x + y > 1.3 * size)
        label = 2;
      else if ((x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r)
        label = 1;
      s.truth.at(x, y) = static_cast<std::uint8_t>(label);
      for (int c = 0; c < 3; ++c) s.image.at(x, y, c) = clamp_byte(colors[label][c] + noise(rng));
      noisy_unary(s.unary, static_cast<std::size_t>(y) * size + x, label, flip_rate, rng);
    }
  return s;
}

CameraIntrinsics Corridor::intrinsics() const { return {100.0, 100.0, 79.5, 59.5, 0.5, 160, 120}; }

LabelTable Corridor::palette() const {
  LabelTable t;
  t.entries = {{Floor, "floor", {128, 64, 128}, false},
               {LeftWall, "left_wall", {220, 20, 60}, false},
               {RightWall, "right_wall", {70, 70, 220}, false},
               {EndWall, "end_wall", {107, 142, 35}, false},
               {Sky, "sky", {70, 130, 180}, true}};
  return t;
}

Pose Corridor::pose(int frame) const {
  Pose p;
  // camera x right = world -y, camera y down = world -z, optical axis = world +x
  p.rotation << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  p.translation = {step * frame, 0.0, camera_height};
  return p;
}

GridConfig Corridor::grid() const {
  GridConfig g;
  g.dims = {150, 150, 50};
  g.resolution = 0.2;
  return g;
}

CorridorFrame render_corridor(const Corridor& scene, int frame, std::uint32_t seed) {
  const CameraIntrinsics K = scene.intrinsics();
  std::mt19937 rng(seed * 7919u + static_cast<std::uint32_t>(frame));
  std::normal_distribution<double> color_noise(0.0, scene.color_noise);
  std::normal_distribution<double> depth_noise(0.0, scene.depth_noise);

  CorridorFrame f;
  f.pose = scene.pose(frame);
  f.rgb = RgbImage(K.width, K.height);
  f.depth = DepthImage(K.width, K.height, std::numeric_limits<float>::quiet_NaN());
  f.truth = LabelImage(K.width, K.height);
  f.unary.width = K.width;
  f.unary.height = K.height;
  f.unary.labels = Corridor::kLabels;
  f.unary.probs.assign(f.rgb.pixel_count() * Corridor::kLabels, 0.0f);

  const Eigen::Vector3d C = f.pose.translation;
  for (int v = 0; v < K.height; ++v)
    for (int u = 0; u < K.width; ++u) {
      // Ray parameterized by camera depth: X = C + t * d.
      const Eigen::Vector3d d = f.pose.rotation * Eigen::Vector3d((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      double best = std::numeric_limits<double>::infinity();
      int label = Corridor::Sky;
      auto consider = [&](double t, int l) {
        if (!(t > 1e-6) || t >= best) return;
        const Eigen::Vector3d X = C + t * d;
        const double eps = 1e-9;
        if (X.x() > scene.end_x + eps || std::abs(X.y()) > scene.half_width + eps) return;
        if (X.z() < scene.floor_z - eps || X.z() > scene.wall_top + eps) return;
        best = t;
        label = l;
      };
      if (d.z() != 0.0) consider((scene.floor_z - C.z()) / d.z(), Corridor::Floor);
      if (d.y() != 0.0) {
        consider((scene.half_width - C.y()) / d.y(), Corridor::LeftWall);
        consider((-scene.half_width - C.y()) / d.y(), Corridor::RightWall);
      }
      if (d.x() != 0.0) consider((scene.end_x - C.x()) / d.x(), Corridor::EndWall);

      std::array<double, 3> rgb{140, 190, 240};
      if (label != Corridor::Sky) {
        const Eigen::Vector3d X = C + best * d;
        switch (label) {
          case Corridor::Floor: {
            const bool dark = (static_cast<long>(std::floor(X.x())) + static_cast<long>(std::floor(X.y()))) % 2 == 0;
            rgb = dark ? std::array<double, 3>{110, 110, 110} : std::array<double, 3>{135, 135, 135};
            break;
          }
          case Corridor::LeftWall:
          case Corridor::RightWall: {
            const double shade = static_cast<long>(std::floor(X.x() / 2.0)) % 2 == 0 ? 15.0 : -15.0;
            rgb = label == Corridor::LeftWall ? std::array<double, 3>{180 + shade, 70, 60}
                                              : std::array<double, 3>{60, 80, 180 + shade};
            break;
          }
          default: rgb = {70, 170, 80}; break;
        }
        f.depth.at(u, v) = static_cast<float>(best * (1.0 + depth_noise(rng)));
      }
      f.truth.at(u, v) = static_cast<std::uint8_t>(label);
      for (int c = 0; c < 3; ++c) f.rgb.at(u, v, c) = clamp_byte(rgb[c] + color_noise(rng));
      noisy_unary(f.unary, static_cast<std::size_t>(v) * K.width + u, label, scene.flip_rate, rng);
    }
  return f;
}

void write_corridor_dataset(const std::filesystem::path& dir, const Corridor& scene, int frames, std::uint32_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  const CameraIntrinsics K = scene.intrinsics();
  std::vector<Pose> poses;
  std::ostringstream manifest;
  for (int i = 0; i < frames; ++i) {
    const CorridorFrame f = render_corridor(scene, i, seed);
    poses.push_back(f.pose);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06d", i);
    const std::string s = stem;
    write_ppm(dir / "frames" / (s + ".ppm"), f.rgb);
    if (i % 2 == 1) {
      DepthImage disparity(f.depth.width(), f.depth.height(), 0.0f);
      for (std::size_t p = 0; p < disparity.pixel_count(); ++p)
        if (std::isfinite(f.depth[p])) disparity[p] = static_cast<float>(K.fx * K.baseline / f.depth[p]);
      write_disparity(dir / "frames" / (s + ".disp"), disparity);
    } else {
      write_depth(dir / "frames" / (s + ".depth"), f.depth);
    }
    write_unary(dir / "frames" / (s + ".unry"), f.unary);
    fs::create_directories(dir / "truth");
    write_pgm(dir / "truth" / (s + ".pgm"), f.truth);
    manifest << i << " frames/" << s << ".ppm frames/" << s << (i % 2 == 1 ? ".disp" : ".depth") << " frames/" << s
             << ".unry truth/" << s << ".pgm\n";
  }
  write_text(dir / "manifest.txt", manifest.str());
  write_poses(dir / "poses.txt", poses);
  write_calibration(dir / "calib.txt", K);
  write_palette(dir / "palette.txt", scene.palette());
  const GridConfig g = scene.grid();
  std::ostringstream config;
  config << "palette = palette.txt\ncalibration = calib.txt\nposes = poses.txt\n"
         << "grid.dims = " << g.dims[0] << ',' << g.dims[1] << ',' << g.dims[2] << '\n'
         << "grid.resolution = " << g.resolution << '\n';
  write_text(dir / "config.txt", config.str());
}

void write_three_region(const std::filesystem::path& dir, const Scene2d& scene) {
  std::filesystem::create_directories(dir);
  write_ppm(dir / "image.ppm", scene.image);
  write_unary(dir / "unary.unry", scene.unary);
  write_pgm(dir / "truth.pgm", scene.truth);
}

}  // namespace semmap::synth
