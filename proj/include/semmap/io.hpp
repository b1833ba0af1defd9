#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semmap/core_types.hpp"
#include "semmap/grid_map.hpp"
#include "semmap/image.hpp"
#include "semmap/superpixel.hpp"

namespace semmap {

namespace fs = std::filesystem;

/// Per-pixel class probabilities ("UNRY" files).
struct UnaryMap {
  int width = 0;
  int height = 0;
  int labels = 0;
  std::vector<float> probs;  // pixel-major, label-minor

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  float prob(std::size_t pixel, int label) const { return probs[pixel * labels + label]; }
  LabelDistribution distribution(std::size_t pixel) const;
  /// -log(max(p, floor)) per pixel and label: pixel count x labels.
  Eigen::MatrixXd costs() const;
  /// Per-pixel argmax.
  LabelImage argmax() const;
};

/// All readers throw InputError with the offending path in the message.
UnaryMap read_unary(const fs::path& path);
void write_unary(const fs::path& path, const UnaryMap& map);

/// Reads "DPTH" (meters) or "DISP" (pixels) files. Disparities are turned
/// into depth with `intrinsics`; non-positive disparity becomes NaN.
DepthImage read_depth(const fs::path& path, const CameraIntrinsics& intrinsics);
void write_depth(const fs::path& path, const DepthImage& depth);
void write_disparity(const fs::path& path, const DepthImage& disparity);

/// One line per frame with 12 numbers: row-major 3x4 world-from-camera.
std::vector<Pose> read_poses(const fs::path& path);
void write_poses(const fs::path& path, const std::vector<Pose>& poses);

/// "fx fy cx cy baseline"; width and height stay zero.
CameraIntrinsics read_calibration(const fs::path& path);
void write_calibration(const fs::path& path, const CameraIntrinsics& intrinsics);

struct LabelEntry {
  int id = 0;
  std::string name;
  std::array<std::uint8_t, 3> rgb{0, 0, 0};
  bool is_sky = false;
};

/// Label id, name, palette color and sky flag. Ids are 0..size-1.
struct LabelTable {
  std::vector<LabelEntry> entries;

  int size() const { return static_cast<int>(entries.size()); }
  std::optional<int> sky_id() const;
  std::vector<std::string> names() const;
  /// Void (255) and unknown ids map to black.
  std::array<std::uint8_t, 3> color(int id) const;
};

/// Lines "id name r g b is_sky"; '#' starts a comment. Ids must be
/// 0..n-1 in any order.
LabelTable read_palette(const fs::path& path);
void write_palette(const fs::path& path, const LabelTable& table);

RgbImage read_ppm(const fs::path& path);
void write_ppm(const fs::path& path, const RgbImage& image);
/// 8-bit grayscale.
MaskImage read_pgm(const fs::path& path);
void write_pgm(const fs::path& path, const MaskImage& image);
/// 16-bit grayscale, big-endian samples as the format requires.
void write_pgm16(const fs::path& path, const std::vector<std::uint16_t>& values, int width, int height);
void write_superpixels(const fs::path& path, const SuperpixelMap& sp);

RgbImage colorize(const LabelImage& labels, const LabelTable& table);

/// Evicted-cell archive: headerless stream of fixed-size records.
struct ArchiveRecord {
  Eigen::Vector3i global;
  GridCell cell;
};

std::size_t archive_record_size(int label_count);

class ArchiveWriter {
 public:
  /// Opens for appending; `truncate` starts a fresh archive.
  ArchiveWriter(const fs::path& path, int label_count, bool truncate);

  /// Writes cells that carry any observation; pristine or evidence-free
  /// cells are skipped. Returns true when a record was written.
  bool write(const Eigen::Vector3i& global, const GridCell& cell);
  void flush();
  std::size_t written() const { return written_; }

 private:
  fs::path path_;
  int label_count_;
  std::ofstream out_;
  std::size_t written_ = 0;
};

std::vector<ArchiveRecord> read_archive(const fs::path& path, int label_count);

/// Exact grid state plus pipeline progress, for restarting a run.
struct MapSnapshot {
  GridConfig config;
  int label_count = 0;
  Eigen::Vector3i origin_cell = Eigen::Vector3i::Zero();
  std::vector<GridCell> cells;     // storage order
  std::int64_t next_frame = 0;     // first manifest frame not yet processed
  std::uint64_t archive_records = 0;
};

void write_snapshot(const fs::path& path, const MapSnapshot& snapshot);
MapSnapshot read_snapshot(const fs::path& path);

struct PlyVertex {
  float x = 0.0f, y = 0.0f, z = 0.0f;
  std::uint8_t r = 0, g = 0, b = 0;
};

/// Binary little-endian PLY with float x,y,z and uchar r,g,b.
void write_ply(const fs::path& path, const std::vector<PlyVertex>& vertices);
std::vector<PlyVertex> read_ply(const fs::path& path);

/// Whole file as text; throws InputError.
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace semmap
