#include "semmap/grid_map.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace semmap {
namespace {

int floor_mod(int a, int m) {
  const int r = a % m;
  return r < 0 ? r + m : r;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void GridConfig::validate() const {
  for (int d : dims)
    if (d < 1) throw ConfigError("grid dims must be >= 1");
  if (!(resolution > 0.0)) throw ConfigError("grid resolution must be positive");
  if (!(occupied_threshold > 0.0 && occupied_threshold < 1.0))
    throw ConfigError("occupied threshold must lie in (0, 1)");
  if (!(log_odds_hit > 0.0) || !(log_odds_miss < 0.0)) throw ConfigError("need log_odds_hit > 0 > log_odds_miss");
  if (!(log_odds_min < 0.0) || !(log_odds_max > 0.0)) throw ConfigError("need log_odds_min < 0 < log_odds_max");
  if (!(max_range > 0.0)) throw ConfigError("max_range must be positive");
}

double GridCell::occupancy() const { return sigmoid(log_odds); }

Eigen::Vector3d GridCell::mean_color() const {
  if (color_count == 0) return Eigen::Vector3d::Zero();
  return Eigen::Vector3d(color_sum[0], color_sum[1], color_sum[2]) / static_cast<double>(color_count);
}

ScrollGrid::ScrollGrid(GridConfig config, const Eigen::Vector3i& origin_cell)
    : config_(std::move(config)), origin_cell_(origin_cell) {
  config_.validate();
  cells_.resize(config_.cell_count());
}

std::size_t ScrollGrid::storage_index(const Eigen::Vector3i& global) const {
  const auto& d = config_.dims;
  const std::size_t sx = floor_mod(global.x(), d[0]);
  const std::size_t sy = floor_mod(global.y(), d[1]);
  const std::size_t sz = floor_mod(global.z(), d[2]);
  return (sx * d[1] + sy) * d[2] + sz;
}

std::optional<CellRef> ScrollGrid::global_to_cell(const Eigen::Vector3i& global) const {
  const Eigen::Vector3i local = global - origin_cell_;
  for (int a = 0; a < 3; ++a)
    if (local[a] < 0 || local[a] >= config_.dims[a]) return std::nullopt;
  return CellRef{local, global, storage_index(global)};
}

std::optional<CellRef> ScrollGrid::world_to_cell(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d u = (p - origin()) / config_.resolution;
  Eigen::Vector3i local;
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(u[a])) return std::nullopt;
    const double f = std::floor(u[a]);
    if (f < 0.0 || f >= config_.dims[a]) return std::nullopt;
    local[a] = static_cast<int>(f);
  }
  const Eigen::Vector3i global = origin_cell_ + local;
  return CellRef{local, global, storage_index(global)};
}

Eigen::Vector3d ScrollGrid::cell_center(const Eigen::Vector3i& global) const {
  return (global.cast<double>().array() + 0.5).matrix() * config_.resolution;
}

Eigen::Vector3i GridConfig::anchored_origin(const Eigen::Vector3d& camera_position) const {
  Eigen::Vector3i origin;
  for (int a = 0; a < 3; ++a)
    origin[a] = static_cast<int>(std::floor(camera_position[a] / resolution - anchor[a] * dims[a]));
  return origin;
}

Eigen::Vector3i ScrollGrid::anchored_origin(const Eigen::Vector3d& camera_position) const {
  return config_.anchored_origin(camera_position);
}

std::vector<EvictedCell> ScrollGrid::recenter(const Eigen::Vector3d& camera_position) {
  if (!camera_position.allFinite()) throw PoseError("camera position is not finite");
  return scroll_to(anchored_origin(camera_position));
}

void ScrollGrid::evict(const Eigen::Vector3i& global, std::vector<EvictedCell>& out) {
  GridCell& slot = cells_[storage_index(global)];
  if (sink_) sink_(global, slot);
  out.push_back({global, std::move(slot)});
  slot = GridCell{};
}

std::vector<EvictedCell> ScrollGrid::scroll_to(const Eigen::Vector3i& new_origin) {
  std::vector<EvictedCell> evicted;
  if (new_origin == origin_cell_) return evicted;
  const auto& d = config_.dims;
  auto inside_new = [&](int axis, int global) {
    const int l = global - new_origin[axis];
    return l >= 0 && l < d[axis];
  };
  // Slab walk over the old box: a whole plane or column leaves at once when its
  // leading coordinate falls outside the new box.
  for (int x = 0; x < d[0]; ++x) {
    const int gx = origin_cell_.x() + x;
    const bool keep_x = inside_new(0, gx);
    for (int y = 0; y < d[1]; ++y) {
      const int gy = origin_cell_.y() + y;
      const bool keep_xy = keep_x && inside_new(1, gy);
      for (int z = 0; z < d[2]; ++z) {
        const int gz = origin_cell_.z() + z;
        if (keep_xy && inside_new(2, gz)) continue;
        evict({gx, gy, gz}, evicted);
      }
    }
  }
  origin_cell_ = new_origin;
  return evicted;
}

void ScrollGrid::restore(const Eigen::Vector3i& origin_cell, std::vector<GridCell> cells) {
  if (cells.size() != config_.cell_count()) throw ShapeError("snapshot cell count does not match grid dims");
  origin_cell_ = origin_cell;
  cells_ = std::move(cells);
}

std::vector<Eigen::Vector3i> ScrollGrid::traverse(const Eigen::Vector3d& from, const Eigen::Vector3d& to) const {
  std::vector<Eigen::Vector3i> out;
  const Eigen::Vector3d a = (from - origin()) / config_.resolution;
  const Eigen::Vector3d b = (to - origin()) / config_.resolution;
  const Eigen::Vector3d dir = b - a;

  // Clip the parametric segment a + t*dir, t in [0,1], to the closed box.
  double t0 = 0.0, t1 = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = 0.0, hi = config_.dims[k];
    if (dir[k] == 0.0) {
      if (a[k] < lo || a[k] > hi) return out;
      continue;
    }
    double ta = (lo - a[k]) / dir[k];
    double tb = (hi - a[k]) / dir[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return out;
  }

  auto cell_at = [&](double t) {
    Eigen::Vector3i c;
    for (int k = 0; k < 3; ++k) {
      const int f = static_cast<int>(std::floor(a[k] + t * dir[k]));
      c[k] = std::clamp(f, 0, config_.dims[k] - 1);
    }
    return c;
  };
  Eigen::Vector3i cell = cell_at(t0);
  const Eigen::Vector3i last = cell_at(t1);

  Eigen::Vector3i step;
  Eigen::Vector3d t_max, t_delta;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (dir[k] > 0.0) {
      step[k] = 1;
      t_max[k] = (cell[k] + 1 - a[k]) / dir[k];
      t_delta[k] = 1.0 / dir[k];
    } else if (dir[k] < 0.0) {
      step[k] = -1;
      t_max[k] = (cell[k] - a[k]) / dir[k];
      t_delta[k] = -1.0 / dir[k];
    } else {
      step[k] = 0;
      t_max[k] = kInf;
      t_delta[k] = kInf;
    }
  }

  const int max_steps = (last - cell).cwiseAbs().sum() + 3;
  for (int i = 0; i <= max_steps; ++i) {
    out.push_back(cell);
    if (cell == last) break;
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    if (t_max[axis] > t1) break;
    cell[axis] += step[axis];
    if (cell[axis] < 0 || cell[axis] >= config_.dims[axis]) break;
    t_max[axis] += t_delta[axis];
  }
  return out;
}

void ScrollGrid::apply_log_odds(GridCell& cell, double delta) const {
  const double v = std::clamp(static_cast<double>(cell.log_odds) + delta, config_.log_odds_min, config_.log_odds_max);
  cell.log_odds = static_cast<float>(v);
}

FrameIntegration ScrollGrid::integrate_depth_frame(const DepthImage& depth, const RgbImage& colors, const Pose& pose,
                                                   const CameraIntrinsics& intrinsics, const MaskImage& sky_mask,
                                                   std::int32_t frame_index) {
  if (!depth.same_shape(intrinsics.width, intrinsics.height) || !colors.same_shape(depth))
    throw FrameShapeError("depth and color images must match the intrinsics size");
  if (!sky_mask.empty() && !sky_mask.same_shape(depth)) throw FrameShapeError("sky mask size differs from depth");
  pose.validate();

  FrameIntegration result;
  result.pixel_cell.assign(depth.pixel_count(), -1);
  touch_mark_.assign(cells_.size(), 0);
  std::vector<std::uint8_t> hit_mark;
  if (config_.dedup_hits) hit_mark.assign(cells_.size(), 0);

  auto touch = [&](std::size_t s) {
    if (!touch_mark_[s]) {
      touch_mark_[s] = 1;
      ++result.stats.cells_touched;
    }
    cells_[s].last_update = frame_index;
  };

  const Eigen::Vector3d center = pose.camera_center();
  const Eigen::Vector3i origin = origin_cell_;
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      const std::size_t pix = static_cast<std::size_t>(v) * depth.width() + u;
      if (!sky_mask.empty() && sky_mask[pix]) {
        ++result.stats.sky_pixels;
        continue;
      }
      const double d = depth[pix];
      if (!std::isfinite(d) || d <= 0.0 || d > config_.max_range) {
        ++result.stats.invalid_pixels;
        continue;
      }
      ++result.stats.rays;
      const Eigen::Vector3d endpoint = pose.to_world(intrinsics.back_project(u, v, d));
      const std::optional<CellRef> end_cell = world_to_cell(endpoint);

      for (const Eigen::Vector3i& local : traverse(center, endpoint)) {
        if (end_cell && local == end_cell->local) continue;
        const std::size_t s = storage_index(origin + local);
        apply_log_odds(cells_[s], config_.log_odds_miss);
        ++result.stats.miss_updates;
        touch(s);
      }
      if (!end_cell) continue;
      GridCell& hit = cells_[end_cell->storage];
      result.pixel_cell[pix] = static_cast<std::int64_t>(end_cell->storage);
      if (!config_.dedup_hits || !hit_mark[end_cell->storage]) {
        apply_log_odds(hit, config_.log_odds_hit);
        ++result.stats.hit_updates;
        if (config_.dedup_hits) hit_mark[end_cell->storage] = 1;
      }
      for (int c = 0; c < 3; ++c) hit.color_sum[c] += colors.at(u, v, c);
      ++hit.color_count;
      touch(end_cell->storage);
    }
  }
  return result;
}

GridCell fuse_label(GridCell cell, const LabelDistribution& observation) {
  if (!cell.label_dist) {
    cell.label_dist = observation;
    return cell;
  }
  const LabelDistribution& stored = *cell.label_dist;
  if (stored.size() != observation.size()) throw InvalidDistribution("label count mismatch during fusion");
  std::vector<double> product(stored.size());
  for (std::size_t l = 0; l < stored.size(); ++l) product[l] = std::max(stored[l], kProbabilityFloor) * observation[l];
  cell.label_dist = normalize(product);
  return cell;
}

std::vector<OccupiedCell> occupied_cells(const ScrollGrid& grid) {
  std::vector<OccupiedCell> out;
  const double threshold = grid.config().occupied_threshold;
  grid.for_each_cell([&](const CellRef& ref, const GridCell& cell) {
    if (!cell.label_dist || !(cell.occupancy() > threshold)) return;
    out.push_back({ref.global, ref.storage, grid.cell_center(ref.global), cell.mean_color(), *cell.label_dist});
  });
  return out;
}

Projection project_to_image(const ScrollGrid& grid, const Pose& pose, const CameraIntrinsics& intrinsics,
                            double max_depth) {
  pose.validate();
  Projection proj{LabelImage(intrinsics.width, intrinsics.height, kUnlabeled),
                  Image<float>(intrinsics.width, intrinsics.height, std::numeric_limits<float>::infinity())};
  const double threshold = grid.config().occupied_threshold;
  grid.for_each_cell([&](const CellRef& ref, const GridCell& cell) {
    if (!cell.label_dist || !(cell.occupancy() > threshold)) return;
    const Eigen::Vector3d pc = pose.to_camera(grid.cell_center(ref.global));
    if (!(pc.z() > 0.0) || pc.z() > max_depth) return;
    const Eigen::Vector2d uv = intrinsics.project(pc);
    const long u = std::lround(uv.x());
    const long v = std::lround(uv.y());
    if (u < 0 || v < 0 || u >= intrinsics.width || v >= intrinsics.height) return;
    float& z = proj.depth.at(static_cast<int>(u), static_cast<int>(v));
    if (pc.z() < z) {
      z = static_cast<float>(pc.z());
      proj.labels.at(static_cast<int>(u), static_cast<int>(v)) = static_cast<std::uint8_t>(cell.label_dist->argmax());
    }
  });
  return proj;
}

}  // namespace semmap
