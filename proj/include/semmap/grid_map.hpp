#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "semmap/core_types.hpp"
#include "semmap/image.hpp"

namespace semmap {

struct GridConfig {
  std::array<int, 3> dims{250, 250, 80};
  double resolution = 0.1;  // cell edge, meters
  double occupied_threshold = 0.7;
  double log_odds_hit = 0.85;
  double log_odds_miss = -0.4;
  double log_odds_min = -3.5;
  double log_odds_max = 3.5;
  // Where the camera sits inside the box, as a fraction of each axis extent.
  // z-up worlds: centered horizontally, 2 m of an 8 m box below the camera.
  Eigen::Vector3d anchor{0.5, 0.5, 0.25};
  double max_range = 40.0;  // depth readings beyond this are ignored
  bool dedup_hits = false;  // at most one hit per cell and frame

  void validate() const;
  /// Origin cell that puts `camera_position` at the anchor.
  Eigen::Vector3i anchored_origin(const Eigen::Vector3d& camera_position) const;
  std::size_t cell_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
  }
};

struct GridCell {
  float log_odds = 0.0f;
  std::array<float, 3> color_sum{0.0f, 0.0f, 0.0f};
  std::uint32_t color_count = 0;
  std::optional<LabelDistribution> label_dist;  // empty while unobserved
  std::int32_t last_update = -1;

  bool pristine() const { return color_count == 0 && !label_dist && log_odds == 0.0f && last_update < 0; }
  double occupancy() const;
  Eigen::Vector3d mean_color() const;

  bool operator==(const GridCell&) const = default;
};

/// A cell addressed three ways: box-relative, world-global and storage slot.
struct CellRef {
  Eigen::Vector3i local;
  Eigen::Vector3i global;
  std::size_t storage = 0;
};

struct EvictedCell {
  Eigen::Vector3i global;
  GridCell cell;
};

using EvictionSink = std::function<void(const Eigen::Vector3i& global, const GridCell& cell)>;

struct IntegrationStats {
  std::size_t rays = 0;
  std::size_t sky_pixels = 0;
  std::size_t invalid_pixels = 0;
  std::size_t hit_updates = 0;
  std::size_t miss_updates = 0;
  std::size_t cells_touched = 0;  // distinct cells
};

struct FrameIntegration {
  IntegrationStats stats;
  // Storage slot of the cell each pixel's measurement landed in, or -1.
  std::vector<std::int64_t> pixel_cell;
};

/// Fixed-size occupancy grid that scrolls with the camera. Storage is indexed
/// by global cell coordinate modulo dims, so scrolling never moves data: it
/// only resets the slabs that leave the box.
class ScrollGrid {
 public:
  explicit ScrollGrid(GridConfig config, const Eigen::Vector3i& origin_cell = Eigen::Vector3i::Zero());

  const GridConfig& config() const { return config_; }
  const Eigen::Vector3i& origin_cell() const { return origin_cell_; }
  Eigen::Vector3d origin() const { return origin_cell_.cast<double>() * config_.resolution; }
  std::size_t active_cell_count() const { return cells_.size(); }

  std::optional<CellRef> world_to_cell(const Eigen::Vector3d& p) const;
  std::optional<CellRef> global_to_cell(const Eigen::Vector3i& global) const;
  Eigen::Vector3d cell_center(const Eigen::Vector3i& global) const;

  GridCell& cell(std::size_t storage) { return cells_[storage]; }
  const GridCell& cell(std::size_t storage) const { return cells_[storage]; }
  const GridCell& cell(const CellRef& ref) const { return cells_[ref.storage]; }
  GridCell& cell(const CellRef& ref) { return cells_[ref.storage]; }

  /// Origin that puts `camera_position` at the configured anchor.
  Eigen::Vector3i anchored_origin(const Eigen::Vector3d& camera_position) const;

  /// Scrolls so the camera sits at the anchor. Cells leaving the box are
  /// reset, passed to the eviction sink (if any) and returned.
  std::vector<EvictedCell> recenter(const Eigen::Vector3d& camera_position);
  std::vector<EvictedCell> scroll_to(const Eigen::Vector3i& new_origin_cell);

  void set_eviction_sink(EvictionSink sink) { sink_ = std::move(sink); }

  /// Cells crossed by the segment from `from` to `to` (world coordinates),
  /// clipped to the box, in traversal order, as local coordinates.
  std::vector<Eigen::Vector3i> traverse(const Eigen::Vector3d& from, const Eigen::Vector3d& to) const;

  /// Ray-casts every non-sky pixel with a valid depth: misses along the ray,
  /// a hit and the pixel color at the endpoint. An empty sky mask means no sky.
  FrameIntegration integrate_depth_frame(const DepthImage& depth, const RgbImage& colors, const Pose& pose,
                                         const CameraIntrinsics& intrinsics, const MaskImage& sky_mask,
                                         std::int32_t frame_index = 0);

  /// Visits cells in local x-major order: f(const CellRef&, const GridCell&).
  template <typename F>
  void for_each_cell(F&& f) const {
    CellRef ref;
    for (int x = 0; x < config_.dims[0]; ++x)
      for (int y = 0; y < config_.dims[1]; ++y)
        for (int z = 0; z < config_.dims[2]; ++z) {
          ref.local = {x, y, z};
          ref.global = origin_cell_ + ref.local;
          ref.storage = storage_index(ref.global);
          f(static_cast<const CellRef&>(ref), cells_[ref.storage]);
        }
  }

  // Raw state access for snapshots.
  const std::vector<GridCell>& storage() const { return cells_; }
  void restore(const Eigen::Vector3i& origin_cell, std::vector<GridCell> cells);

 private:
  std::size_t storage_index(const Eigen::Vector3i& global) const;
  void apply_log_odds(GridCell& cell, double delta) const;
  void evict(const Eigen::Vector3i& global, std::vector<EvictedCell>& out);

  GridConfig config_;
  Eigen::Vector3i origin_cell_;
  std::vector<GridCell> cells_;
  EvictionSink sink_;
  std::vector<std::uint8_t> touch_mark_;
};

/// Bayesian label fusion: product with the stored distribution (floored at
/// kProbabilityFloor), renormalized. An unobserved cell adopts `observation`.
GridCell fuse_label(GridCell cell, const LabelDistribution& observation);

struct OccupiedCell {
  Eigen::Vector3i global;
  std::size_t storage = 0;
  Eigen::Vector3d center;
  Eigen::Vector3d color;
  LabelDistribution label_dist;
};

/// Cells above the occupancy threshold that carry a label distribution,
/// in local x-major order.
std::vector<OccupiedCell> occupied_cells(const ScrollGrid& grid);

struct Projection {
  LabelImage labels;  // kUnlabeled where nothing projected
  Image<float> depth;  // +inf where nothing projected
};

/// Z-buffered projection of every occupied labeled cell center within
/// `max_depth` in front of the camera.
Projection project_to_image(const ScrollGrid& grid, const Pose& pose, const CameraIntrinsics& intrinsics,
                            double max_depth = 40.0);

}  // namespace semmap
