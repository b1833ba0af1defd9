#include "semmap/superpixel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_map>

namespace semmap {
namespace {

double srgb_to_linear(double c) {
  c /= 255.0;
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double kDelta = 6.0 / 29.0;
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

struct Center {
  Eigen::Vector3d lab;
  double x = 0.0;
  double y = 0.0;
};

// Labels 4-connected components of equal-valued pixels. Returns the
// component id per pixel and the component count.
int label_components(const std::vector<std::int32_t>& labels, int w, int h, std::vector<std::int32_t>& comp,
                     std::vector<std::int32_t>& comp_label, std::vector<std::int32_t>& comp_size) {
  const std::size_t n = labels.size();
  comp.assign(n, -1);
  comp_label.clear();
  comp_size.clear();
  std::vector<std::size_t> stack;
  int count = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    const std::int32_t lab = labels[start];
    comp[start] = count;
    stack.assign(1, start);
    std::int32_t size = 0;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
      const std::size_t nb[4] = {x > 0 ? p - 1 : n, x + 1 < w ? p + 1 : n, y > 0 ? p - w : n, y + 1 < h ? p + w : n};
      for (std::size_t q : nb) {
        if (q == n || comp[q] >= 0 || labels[q] != lab) continue;
        comp[q] = count;
        stack.push_back(q);
      }
    }
    comp_label.push_back(lab);
    comp_size.push_back(size);
    ++count;
  }
  return count;
}

void enforce_connectivity(std::vector<std::int32_t>& labels, int w, int h) {
  std::vector<std::int32_t> comp, comp_label, comp_size;
  const int ncomp = label_components(labels, w, h, comp, comp_label, comp_size);

  // Keep the largest component of every label (first in raster order on ties).
  std::unordered_map<std::int32_t, int> keeper;
  for (int c = 0; c < ncomp; ++c) {
    if (comp_label[c] < 0) continue;
    auto it = keeper.find(comp_label[c]);
    if (it == keeper.end() || comp_size[c] > comp_size[it->second]) keeper[comp_label[c]] = c;
  }
  // resolved[c]: the kept component that c now belongs to, -1 while orphaned.
  std::vector<int> resolved(ncomp, -1);
  std::vector<std::int32_t> kept_size(ncomp, 0);
  for (const auto& [lab, c] : keeper) {
    resolved[c] = c;
    kept_size[c] = comp_size[c];
  }

  // Component adjacency, deduplicated.
  std::vector<std::vector<int>> adj(ncomp);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      if (x + 1 < w && comp[p] != comp[p + 1]) {
        adj[comp[p]].push_back(comp[p + 1]);
        adj[comp[p + 1]].push_back(comp[p]);
      }
      if (y + 1 < h && comp[p] != comp[p + w]) {
        adj[comp[p]].push_back(comp[p + w]);
        adj[comp[p + w]].push_back(comp[p]);
      }
    }
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }

  bool pending = true;
  while (pending) {
    pending = false;
    bool progress = false;
    for (int c = 0; c < ncomp; ++c) {
      if (resolved[c] >= 0) continue;
      int best = -1;
      for (int o : adj[c]) {
        const int r = resolved[o];
        if (r < 0) continue;
        if (best < 0 || kept_size[r] > kept_size[best] ||
            (kept_size[r] == kept_size[best] && comp_label[r] < comp_label[best]))
          best = r;
      }
      if (best < 0) {
        pending = true;
        continue;
      }
      resolved[c] = best;
      kept_size[best] += comp_size[c];
      progress = true;
    }
    if (pending && !progress) {
      // Only possible when nothing was kept at all; promote the first orphan.
      for (int c = 0; c < ncomp; ++c)
        if (resolved[c] < 0) {
          resolved[c] = c;
          kept_size[c] = comp_size[c];
          comp_label[c] = std::numeric_limits<std::int32_t>::max();
          break;
        }
    }
  }

  // Contiguous ids in order of first appearance.
  std::vector<std::int32_t> final_id(ncomp, -1);
  std::int32_t next = 0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const int r = resolved[comp[p]];
    if (final_id[r] < 0) final_id[r] = next++;
    labels[p] = final_id[r];
  }
}

}  // namespace

Eigen::Vector3d rgb_to_lab(double r, double g, double b) {
  const double rl = srgb_to_linear(r), gl = srgb_to_linear(g), bl = srgb_to_linear(b);
  const double x = (0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl) / 0.95047;
  const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double z = (0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl) / 1.08883;
  const double fx = lab_f(x), fy = lab_f(y), fz = lab_f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

SuperpixelMap slic(const RgbImage& image, const SlicParams& params) {
  const int w = image.width(), h = image.height();
  if (image.empty()) throw FrameShapeError("slic needs a non-empty image");
  const std::size_t n = image.pixel_count();
  if (params.target_count < 1 || static_cast<std::size_t>(params.target_count) > n)
    throw SeedError("superpixel target must lie in [1, pixel count]");
  if (!(params.compactness > 0.0) || params.iterations < 0) throw ConfigError("invalid SLIC parameters");

  std::vector<Eigen::Vector3d> lab(n);
  for (std::size_t p = 0; p < n; ++p) lab[p] = rgb_to_lab(image[3 * p], image[3 * p + 1], image[3 * p + 2]);

  const double s = std::sqrt(static_cast<double>(n) / params.target_count);
  int nx = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(params.target_count) * w / h))));
  nx = std::min(nx, w);
  int ny = std::max(1, static_cast<int>(std::lround(static_cast<double>(params.target_count) / nx)));
  ny = std::min(ny, h);
  const double step_x = static_cast<double>(w) / nx, step_y = static_cast<double>(h) / ny;

  auto gradient = [&](int x, int y) {
    const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, w - 1);
    const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, h - 1);
    const auto at = [&](int px, int py) -> const Eigen::Vector3d& { return lab[static_cast<std::size_t>(py) * w + px]; };
    return (at(x1, y) - at(x0, y)).squaredNorm() + (at(x, y1) - at(x, y0)).squaredNorm();
  };

  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      int cx = std::min(static_cast<int>((i + 0.5) * step_x), w - 1);
      int cy = std::min(static_cast<int>((j + 0.5) * step_y), h - 1);
      double best = gradient(cx, cy);
      int bx = cx, by = cy;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = cx + dx, y = cy + dy;
          if (x < 0 || y < 0 || x >= w || y >= h) continue;
          const double g = gradient(x, y);
          if (g < best) {
            best = g;
            bx = x;
            by = y;
          }
        }
      // Unmoved seeds keep the exact cell center so uniform regions split evenly.
      const bool moved = bx != cx || by != cy;
      const double px = moved ? bx : std::min((i + 0.5) * step_x - 0.5, w - 1.0);
      const double py = moved ? by : std::min((j + 0.5) * step_y - 0.5, h - 1.0);
      centers.push_back({lab[static_cast<std::size_t>(by) * w + bx], px, py});
    }

  const int radius = static_cast<int>(std::ceil(std::max({s, step_x, step_y})));
  const double spatial = (params.compactness / s) * (params.compactness / s);
  std::vector<std::int32_t> labels(n, -1);
  std::vector<double> dist(n);
  const int k = static_cast<int>(centers.size());
  for (int it = 0; it < std::max(params.iterations, 1); ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (int c = 0; c < k; ++c) {
      const Center& ct = centers[c];
      const int x0 = std::max(0, static_cast<int>(ct.x) - radius), x1 = std::min(w - 1, static_cast<int>(ct.x) + radius);
      const int y0 = std::max(0, static_cast<int>(ct.y) - radius), y1 = std::min(h - 1, static_cast<int>(ct.y) + radius);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          const double dxy = (x - ct.x) * (x - ct.x) + (y - ct.y) * (y - ct.y);
          const double d = (lab[p] - ct.lab).squaredNorm() + spatial * dxy;
          if (d < dist[p]) {
            dist[p] = d;
            labels[p] = c;
          }
        }
    }
    if (it + 1 >= params.iterations) break;
    std::vector<Eigen::Vector3d> sum_lab(k, Eigen::Vector3d::Zero());
    std::vector<double> sx(k, 0.0), sy(k, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t p = 0; p < n; ++p) {
      const int c = labels[p];
      if (c < 0) continue;
      sum_lab[c] += lab[p];
      sx[c] += static_cast<double>(p % w);
      sy[c] += static_cast<double>(p / w);
      ++cnt[c];
    }
    for (int c = 0; c < k; ++c) {
      if (cnt[c] == 0) continue;
      centers[c] = {sum_lab[c] / cnt[c], sx[c] / cnt[c], sy[c] / cnt[c]};
    }
  }

  enforce_connectivity(labels, w, h);

  SuperpixelMap sp;
  sp.width = w;
  sp.height = h;
  sp.labels = std::move(labels);
  sp.count = *std::max_element(sp.labels.begin(), sp.labels.end()) + 1;
  sp.mean_color = Eigen::MatrixXd::Zero(sp.count, 3);
  sp.mean_position = Eigen::MatrixXd::Zero(sp.count, 2);
  sp.sizes.assign(sp.count, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const int c = sp.labels[p];
    for (int ch = 0; ch < 3; ++ch) sp.mean_color(c, ch) += image[3 * p + ch];
    sp.mean_position(c, 0) += static_cast<double>(p % w);
    sp.mean_position(c, 1) += static_cast<double>(p / w);
    ++sp.sizes[c];
  }
  for (int c = 0; c < sp.count; ++c) {
    sp.mean_color.row(c) /= sp.sizes[c];
    sp.mean_position.row(c) /= sp.sizes[c];
  }
  return sp;
}

bool is_four_connected(const SuperpixelMap& sp) {
  std::vector<std::int32_t> comp, comp_label, comp_size;
  const int ncomp = label_components(sp.labels, sp.width, sp.height, comp, comp_label, comp_size);
  if (ncomp != sp.count) return false;
  std::vector<char> seen(sp.count, 0);
  for (std::int32_t l : comp_label) {
    if (l < 0 || l >= sp.count || seen[l]) return false;
    seen[l] = 1;
  }
  return true;
}

CliqueSet CliqueSet::none(std::size_t node_count, Eigen::Index label_count) {
  CliqueSet set;
  set.node_to_clique.assign(node_count, -1);
  set.features.positions.resize(0, 0);
  set.features.colors.resize(0, 3);
  set.unaries.resize(0, label_count);
  return set;
}

CliqueSet CliqueSet::from_assignment(std::span<const std::int32_t> assignment, const FeatureSet& node_features,
                                     const Eigen::Ref<const Eigen::MatrixXd>& node_unaries) {
  const std::size_t n = assignment.size();
  if (static_cast<std::size_t>(node_features.size()) != n || static_cast<std::size_t>(node_unaries.rows()) != n)
    throw ShapeError("clique assignment, features and unaries disagree on node count");

  std::map<std::int32_t, std::int32_t> segment_to_clique;
  for (std::int32_t seg : assignment)
    if (seg >= 0) segment_to_clique.emplace(seg, 0);
  std::int32_t next = 0;
  CliqueSet set;
  for (auto& [seg, id] : segment_to_clique) {
    id = next++;
    set.source_segment.push_back(seg);
  }

  set.node_to_clique.assign(n, -1);
  set.members.resize(segment_to_clique.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (assignment[i] < 0) continue;
    const std::int32_t c = segment_to_clique[assignment[i]];
    set.node_to_clique[i] = c;
    set.members[c].push_back(static_cast<std::int32_t>(i));
  }

  const Eigen::Index nc = static_cast<Eigen::Index>(set.members.size());
  set.features.positions = Eigen::MatrixXd::Zero(nc, node_features.position_dim());
  set.features.colors = Eigen::MatrixXd::Zero(nc, 3);
  set.unaries = Eigen::MatrixXd::Zero(nc, node_unaries.cols());
  for (Eigen::Index c = 0; c < nc; ++c) {
    for (std::int32_t i : set.members[c]) {
      set.features.positions.row(c) += node_features.positions.row(i);
      set.features.colors.row(c) += node_features.colors.row(i);
      set.unaries.row(c) += node_unaries.row(i);
    }
    const double m = static_cast<double>(set.members[c].size());
    set.features.positions.row(c) /= m;
    set.features.colors.row(c) /= m;
    set.unaries.row(c) /= m;
  }
  return set;
}

void CliqueSet::validate(std::size_t node_count, Eigen::Index label_count) const {
  if (node_to_clique.size() != node_count) throw ShapeError("clique membership does not cover every node");
  const auto nc = static_cast<std::int32_t>(members.size());
  if (features.size() != nc || features.colors.rows() != nc || unaries.rows() != nc)
    throw ShapeError("clique features or unaries have the wrong row count");
  if (nc > 0 && unaries.cols() != label_count) throw ShapeError("clique unary width differs from the label count");
  std::size_t assigned = 0;
  for (std::int32_t c : node_to_clique) {
    if (c < -1 || c >= nc) throw ShapeError("clique id out of range");
    if (c >= 0) ++assigned;
  }
  std::size_t listed = 0;
  for (std::int32_t c = 0; c < nc; ++c) {
    if (members[c].empty()) throw ShapeError("empty clique");
    for (std::int32_t i : members[c]) {
      if (i < 0 || static_cast<std::size_t>(i) >= node_count || node_to_clique[i] != c)
        throw ShapeError("clique member list disagrees with node membership");
    }
    listed += members[c].size();
  }
  if (listed != assigned) throw ShapeError("clique member lists overlap");
}

CliqueSet build_cliques_2d(const SuperpixelMap& sp, const FeatureSet& node_features,
                           const Eigen::Ref<const Eigen::MatrixXd>& node_unaries) {
  if (sp.labels.size() != static_cast<std::size_t>(node_features.size()))
    throw ShapeError("superpixel map and node features differ in size");
  return CliqueSet::from_assignment(sp.labels, node_features, node_unaries);
}

CliqueSet build_cliques_3d(const SuperpixelMap& sp, const DepthImage& depth, const MaskImage& sky_mask,
                           const Pose& pose, const CameraIntrinsics& intrinsics, const ScrollGrid& grid,
                           std::span<const std::size_t> node_slots, const FeatureSet& node_features,
                           const Eigen::Ref<const Eigen::MatrixXd>& node_unaries) {
  if (!depth.same_shape(sp.width, sp.height) || !depth.same_shape(intrinsics.width, intrinsics.height))
    throw FrameShapeError("superpixel map, depth and intrinsics disagree on image size");
  if (!sky_mask.empty() && !sky_mask.same_shape(depth)) throw FrameShapeError("sky mask size differs from depth");
  pose.validate();
  if (!grid.world_to_cell(pose.camera_center()))
    throw ConsistencyError("camera lies outside the grid box; pose and grid origin are out of step");

  std::unordered_map<std::size_t, std::int32_t> node_of_slot;
  node_of_slot.reserve(node_slots.size());
  for (std::size_t i = 0; i < node_slots.size(); ++i) node_of_slot.emplace(node_slots[i], static_cast<std::int32_t>(i));

  // (node, superpixel) per claiming pixel.
  std::vector<std::pair<std::int32_t, std::int32_t>> claims;
  const double max_range = grid.config().max_range;
  for (int v = 0; v < depth.height(); ++v)
    for (int u = 0; u < depth.width(); ++u) {
      const std::size_t pix = static_cast<std::size_t>(v) * depth.width() + u;
      if (!sky_mask.empty() && sky_mask[pix]) continue;
      const double d = depth[pix];
      if (!std::isfinite(d) || d <= 0.0 || d > max_range) continue;
      const auto cell = grid.world_to_cell(pose.to_world(intrinsics.back_project(u, v, d)));
      if (!cell) continue;
      const auto it = node_of_slot.find(cell->storage);
      if (it == node_of_slot.end()) continue;
      claims.emplace_back(it->second, sp.labels[pix]);
    }
  std::sort(claims.begin(), claims.end());

  std::vector<std::int32_t> assignment(node_slots.size(), -1);
  for (std::size_t a = 0; a < claims.size();) {
    const std::int32_t node = claims[a].first;
    std::int32_t best = -1;
    std::size_t best_count = 0;
    while (a < claims.size() && claims[a].first == node) {
      const std::int32_t seg = claims[a].second;
      std::size_t count = 0;
      while (a < claims.size() && claims[a].first == node && claims[a].second == seg) {
        ++count;
        ++a;
      }
      // Segments arrive in ascending order, so strict > keeps the lowest id on ties.
      if (count > best_count) {
        best = seg;
        best_count = count;
      }
    }
    assignment[node] = best;
  }
  return CliqueSet::from_assignment(assignment, node_features, node_unaries);
}

}  // namespace semmap
