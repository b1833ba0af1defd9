#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "semmap/crf.hpp"
#include "semmap/grid_map.hpp"
#include "semmap/io.hpp"
#include "semmap/metrics.hpp"
#include "semmap/superpixel.hpp"

namespace semmap {

enum class CrfModel { Unary, Dense, Pn, Hier };

CrfModel parse_model(const std::string& name);
std::string model_name(CrfModel model);
FilterBackend parse_backend(const std::string& name);

struct PipelineConfig {
  LabelTable labels;  // empty: default palette sized from the unary map
  fs::path palette_path;
  fs::path calibration_path;
  fs::path poses_path;

  GridConfig grid;
  KernelParams kernel_2d = KernelParams::defaults_2d();
  KernelParams kernel_3d = KernelParams::defaults_3d();
  KernelParams clique_kernel_2d = KernelParams::defaults_2d();
  KernelParams clique_kernel_3d = KernelParams::defaults_3d();
  HierarchyParams hierarchy;
  double pn_consistency = 10.0;  // consistency cost used by the pn model
  SlicParams slic;

  CrfModel model = CrfModel::Hier;
  int iterations = 5;
  double convergence_delta = 0.0;
  FilterBackend backend = FilterBackend::Lattice;
  int stride = 1;
  double max_depth = 40.0;
  fs::path out = "out";

  // map3d run control
  fs::path resume;        // snapshot to continue from
  long stop_after = -1;   // manifest frames to consume before stopping, -1 = all
  bool write_frames = true;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// A config key: dotted name, help text, setter from text and current value
/// as text. Every key can come from a config file or a --name flag.
struct ConfigKey {
  std::string name;
  std::string help;
  bool is_path = false;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

/// Sets one key; throws ConfigError for unknown keys or bad values.
void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value);

/// Applies "key = value" lines ('#' comments). Relative paths are resolved
/// against `base_dir`.
void apply_config_text(PipelineConfig& config, const std::string& text, const fs::path& base_dir);
PipelineConfig load_config(const fs::path& path);
std::string dump_config(const PipelineConfig& config);

/// Loads the palette named by the config, if any.
void load_palette(PipelineConfig& config);
/// Palette with `label_count` evenly spread colors and no sky label.
LabelTable default_palette(int label_count);

// ---- 2D ----

struct Infer2dResult {
  LabelImage labels;
  std::vector<IterationRecord> diagnostics;
  int superpixels = 0;
  std::optional<MetricsSummary> metrics;
  std::optional<ConfusionMatrix> confusion;
};

/// In-memory 2D run: superpixels, cliques and mean-field over the pixel
/// graph, or plain argmax for the unary model.
Infer2dResult run_infer2d(const PipelineConfig& config, const RgbImage& image, const UnaryMap& unary,
                          const std::optional<LabelImage>& truth = std::nullopt);

/// File-based wrapper; writes labels, a palette rendering, diagnostics and
/// (with truth) metrics under config.out.
Infer2dResult cmd_infer2d(const PipelineConfig& config, const fs::path& image, const fs::path& unary,
                          const std::optional<fs::path>& truth = std::nullopt);

// ---- 3D ----

struct FrameEntry {
  long index = 0;
  fs::path rgb;
  fs::path depth;
  fs::path unary;
  std::optional<fs::path> truth;
};

/// Manifest lines "index rgb depth unary [truth]"; relative paths resolve
/// against the manifest's directory.
std::vector<FrameEntry> read_manifest(const fs::path& path);

struct FrameReport {
  long index = 0;
  IntegrationStats integration;
  std::size_t nodes = 0;
  std::size_t cliques = 0;
  std::size_t evicted = 0;
  std::size_t archive_records = 0;
  std::size_t active_cells = 0;
  std::vector<IterationRecord> diagnostics;
  std::optional<ConfusionMatrix> confusion;  // projection vs truth for this frame
};

struct Map3dResult {
  std::vector<FrameReport> frames;
  long next_frame = 0;  // manifest position to resume from
  bool finished = false;
  std::optional<ConfusionMatrix> confusion;  // summed over frames with truth
  fs::path snapshot;
  fs::path archive;
  std::size_t map_vertices = 0;
};

Map3dResult cmd_map3d(const PipelineConfig& config, const fs::path& manifest);

// ---- eval / export ----

struct EvalResult {
  ConfusionMatrix confusion;
  std::optional<MetricsSummary> summary;
  std::vector<std::string> missing;  // truth files without a prediction
  std::size_t pairs = 0;
  bool complete() const { return missing.empty(); }
};

/// Pairs files by name: every *.pgm in `truth_dir` needs a namesake in
/// `prediction_dir`. Writes metrics.txt / metrics.csv under config.out.
EvalResult cmd_eval(const PipelineConfig& config, const fs::path& prediction_dir, const fs::path& truth_dir);

struct ExportResult {
  std::size_t vertices = 0;
  fs::path labels_ply;
  fs::path rgb_ply;
};

/// Occupied labeled cells of the archive and the grid (the grid wins over
/// older archive records of the same cell), one vertex per cell center.
/// Writes map_labels.ply (palette colors) and map_rgb.ply (fused colors).
ExportResult export_map(const ScrollGrid& grid, const std::vector<ArchiveRecord>& archive, const LabelTable& labels,
                        const fs::path& out_dir);

ExportResult cmd_export(const PipelineConfig& config, const fs::path& archive, const fs::path& snapshot);

}  // namespace semmap
