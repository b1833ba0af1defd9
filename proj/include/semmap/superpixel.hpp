#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "semmap/core_types.hpp"
#include "semmap/grid_map.hpp"
#include "semmap/image.hpp"

namespace semmap {

struct SlicParams {
  int target_count = 150;
  double compactness = 10.0;
  int iterations = 10;
};

/// Dense per-pixel segmentation with contiguous ids [0, count).
struct SuperpixelMap {
  int width = 0;
  int height = 0;
  int count = 0;
  std::vector<std::int32_t> labels;  // row-major
  Eigen::MatrixXd mean_color;        // count x 3, RGB
  Eigen::MatrixXd mean_position;     // count x 2, pixel (x, y)
  std::vector<std::int32_t> sizes;

  std::int32_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const SuperpixelMap&) const = default;
};

/// SLIC in CIELAB + xy. Centers are seeded on a regular grid, nudged to the
/// lowest-gradient pixel of their 3x3 neighborhood and refined by k-means
/// restricted to a window around each center. Afterwards every superpixel is
/// made 4-connected by folding stray fragments into their largest neighbor.
/// Throws SeedError for target_count < 1 or above the pixel count.
SuperpixelMap slic(const RgbImage& image, const SlicParams& params = {});

/// True iff every id in [0, count) forms a single 4-connected region.
bool is_four_connected(const SuperpixelMap& sp);

/// Higher-order cliques over a node set. Each node belongs to at most one
/// clique; a clique's features and unary are the means over its members.
struct CliqueSet {
  std::vector<std::int32_t> node_to_clique;        // -1 when the node has no clique
  std::vector<std::vector<std::int32_t>> members;  // ascending node indices
  std::vector<std::int32_t> source_segment;        // superpixel each clique came from
  FeatureSet features;                             // one row per clique
  Eigen::MatrixXd unaries;                         // clique count x L

  std::size_t size() const { return members.size(); }
  bool empty() const { return members.empty(); }

  /// Empty set over `node_count` nodes (plain dense CRF).
  static CliqueSet none(std::size_t node_count, Eigen::Index label_count);

  /// Groups nodes by `assignment` (segment id per node, -1 = none). Segments
  /// that own no node produce no clique; clique ids follow segment order.
  static CliqueSet from_assignment(std::span<const std::int32_t> assignment, const FeatureSet& node_features,
                                   const Eigen::Ref<const Eigen::MatrixXd>& node_unaries);

  /// Throws ShapeError if membership, features or unaries disagree.
  void validate(std::size_t node_count, Eigen::Index label_count) const;
};

/// One clique per superpixel over the pixel graph. Node i is pixel
/// (i % width, i / width).
CliqueSet build_cliques_2d(const SuperpixelMap& sp, const FeatureSet& node_features,
                           const Eigen::Ref<const Eigen::MatrixXd>& node_unaries);

/// Transfers superpixel membership to grid cells by back-projecting every
/// valid non-sky pixel. `node_slots` lists the storage slot of each CRF node
/// (an occupied cell). A cell claimed by several superpixels joins the one
/// with the most pixels, ties going to the lowest id. Throws ConsistencyError
/// when the camera is outside the grid box (pose and grid out of step).
CliqueSet build_cliques_3d(const SuperpixelMap& sp, const DepthImage& depth, const MaskImage& sky_mask,
                           const Pose& pose, const CameraIntrinsics& intrinsics, const ScrollGrid& grid,
                           std::span<const std::size_t> node_slots, const FeatureSet& node_features,
                           const Eigen::Ref<const Eigen::MatrixXd>& node_unaries);

/// sRGB (0-255) to CIELAB under D65.
Eigen::Vector3d rgb_to_lab(double r, double g, double b);

}  // namespace semmap
