#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "semmap/core_types.hpp"
#include "semmap/image.hpp"
#include "semmap/io.hpp"

// Procedural fixtures with analytic ground truth, used by the tests and the
// semmap-synth tool.
namespace semmap::synth {

struct Scene2d {
  RgbImage image;
  UnaryMap unary;
  LabelImage truth;
};

/// size x size image with three regions (background, disc, lower-right
/// wedge), noisy colors, and unaries whose observed label is flipped with
/// probability `flip_rate`. The observed label gets 0.6.
Scene2d make_three_region(std::uint32_t seed, int size = 128, double flip_rate = 0.25);

/// Straight corridor along +x: floor, left wall, right wall, end wall, open
/// sky above. Camera at 1.6 m height moving 1 m per frame.
struct Corridor {
  enum Label : int { Floor = 0, LeftWall = 1, RightWall = 2, EndWall = 3, Sky = 4 };
  static constexpr int kLabels = 5;

  double half_width = 3.05;
  double floor_z = 0.05;
  double wall_top = 4.0;
  double end_x = 60.05;
  double camera_height = 1.6;
  double step = 1.0;
  double flip_rate = 0.2;
  double depth_noise = 0.005;  // relative
  double color_noise = 5.0;

  CameraIntrinsics intrinsics() const;
  LabelTable palette() const;
  Pose pose(int frame) const;
  GridConfig grid() const;
};

struct CorridorFrame {
  RgbImage rgb;
  DepthImage depth;  // NaN where the ray escapes
  UnaryMap unary;
  LabelImage truth;
  Pose pose;
};

CorridorFrame render_corridor(const Corridor& scene, int frame, std::uint32_t seed);

/// Writes frames, poses, calibration, palette, manifest.txt and config.txt
/// under `dir`. Odd frames store disparity instead of depth.
void write_corridor_dataset(const std::filesystem::path& dir, const Corridor& scene, int frames, std::uint32_t seed);

/// Writes image.ppm, unary.unry and truth.pgm under `dir`.
void write_three_region(const std::filesystem::path& dir, const Scene2d& scene);

}  // namespace semmap::synth
