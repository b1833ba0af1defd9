#include "semmap/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace semmap {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

long parse_long(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + text + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) out.push_back(parse_double(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(12);
  out << v;
  return out.str();
}

template <typename Range>
std::string join(const Range& values) {
  std::string s;
  for (const auto& v : values) s += (s.empty() ? "" : ",") + fmt(static_cast<double>(v));
  return s;
}

void add_kernel_keys(std::vector<ConfigKey>& keys, const std::string& prefix, KernelParams PipelineConfig::*member) {
  struct Field {
    const char* name;
    double KernelParams::*ptr;
    const char* help;
  };
  static const Field fields[] = {{"w1", &KernelParams::w1, "appearance kernel weight"},
                                 {"w2", &KernelParams::w2, "smoothness kernel weight"},
                                 {"theta_alpha", &KernelParams::theta_alpha, "appearance position bandwidth"},
                                 {"theta_beta", &KernelParams::theta_beta, "appearance color bandwidth"},
                                 {"theta_gamma", &KernelParams::theta_gamma, "smoothness position bandwidth"}};
  for (const Field& f : fields) {
    const std::string name = prefix + "." + f.name;
    keys.push_back({name, std::string(f.help) + " (" + prefix + ")", false,
                    [=](PipelineConfig& c, const std::string& v) { (c.*member).*(f.ptr) = parse_double(name, v); },
                    [=](const PipelineConfig& c) { return fmt((c.*member).*(f.ptr)); }});
  }
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  auto path_key = [&](const std::string& name, const std::string& help, fs::path PipelineConfig::*member) {
    k.push_back({name, help, true, [=](PipelineConfig& c, const std::string& v) { c.*member = trim(v); },
                 [=](const PipelineConfig& c) { return (c.*member).string(); }});
  };
  auto num_key = [&](const std::string& name, const std::string& help, auto getter) {
    k.push_back({name, help, false,
                 [=](PipelineConfig& c, const std::string& v) { *getter(c) = parse_double(name, v); },
                 [=](const PipelineConfig& c) { return fmt(*getter(const_cast<PipelineConfig&>(c))); }});
  };
  auto int_key = [&](const std::string& name, const std::string& help, auto getter) {
    k.push_back({name, help, false,
                 [=](PipelineConfig& c, const std::string& v) {
                   *getter(c) = static_cast<std::remove_reference_t<decltype(*getter(c))>>(parse_long(name, v));
                 },
                 [=](const PipelineConfig& c) { return std::to_string(*getter(const_cast<PipelineConfig&>(c))); }});
  };
  auto bool_key = [&](const std::string& name, const std::string& help, auto getter) {
    k.push_back({name, help, false, [=](PipelineConfig& c, const std::string& v) { *getter(c) = parse_bool(name, v); },
                 [=](const PipelineConfig& c) { return std::string(*getter(const_cast<PipelineConfig&>(c)) ? "true" : "false"); }});
  };

  path_key("palette", "label palette file: id name r g b is_sky", &PipelineConfig::palette_path);
  path_key("calibration", "calibration file: fx fy cx cy baseline", &PipelineConfig::calibration_path);
  path_key("poses", "pose file, 12 numbers per frame", &PipelineConfig::poses_path);
  path_key("out", "output directory", &PipelineConfig::out);
  path_key("resume", "map3d: snapshot to resume from", &PipelineConfig::resume);

  k.push_back({"grid.dims", "cells per axis, x,y,z", false,
               [](PipelineConfig& c, const std::string& v) {
                 const auto d = parse_list("grid.dims", v);
                 if (d.size() != 3) throw ConfigError("grid.dims needs three values");
                 for (int a = 0; a < 3; ++a) {
                   if (d[a] != std::floor(d[a]) || d[a] < 1) throw ConfigError("grid.dims must be positive integers");
                   c.grid.dims[a] = static_cast<int>(d[a]);
                 }
               },
               [](const PipelineConfig& c) { return join(c.grid.dims); }});
  num_key("grid.resolution", "cell edge in meters", [](PipelineConfig& c) { return &c.grid.resolution; });
  num_key("grid.occupied_threshold", "occupancy probability threshold",
          [](PipelineConfig& c) { return &c.grid.occupied_threshold; });
  num_key("grid.log_odds_hit", "log-odds added on a hit", [](PipelineConfig& c) { return &c.grid.log_odds_hit; });
  num_key("grid.log_odds_miss", "log-odds added on a pass-through",
          [](PipelineConfig& c) { return &c.grid.log_odds_miss; });
  num_key("grid.log_odds_min", "lower log-odds clamp", [](PipelineConfig& c) { return &c.grid.log_odds_min; });
  num_key("grid.log_odds_max", "upper log-odds clamp", [](PipelineConfig& c) { return &c.grid.log_odds_max; });
  k.push_back({"grid.anchor", "camera position inside the box as axis fractions x,y,z", false,
               [](PipelineConfig& c, const std::string& v) {
                 const auto a = parse_list("grid.anchor", v);
                 if (a.size() != 3) throw ConfigError("grid.anchor needs three values");
                 c.grid.anchor = {a[0], a[1], a[2]};
               },
               [](const PipelineConfig& c) {
                 return join(std::vector<double>{c.grid.anchor[0], c.grid.anchor[1], c.grid.anchor[2]});
               }});
  num_key("grid.max_range", "ignore depth beyond this many meters", [](PipelineConfig& c) { return &c.grid.max_range; });
  bool_key("grid.dedup_hits", "count at most one hit per cell and frame",
           [](PipelineConfig& c) { return &c.grid.dedup_hits; });

  add_kernel_keys(k, "kernel2d", &PipelineConfig::kernel_2d);
  add_kernel_keys(k, "kernel3d", &PipelineConfig::kernel_3d);
  add_kernel_keys(k, "clique2d", &PipelineConfig::clique_kernel_2d);
  add_kernel_keys(k, "clique3d", &PipelineConfig::clique_kernel_3d);

  k.push_back({"hier.consistency", "child-clique consistency cost, one value or one per label", false,
               [](PipelineConfig& c, const std::string& v) {
                 c.hierarchy.consistency_cost = parse_list("hier.consistency", v);
               },
               [](const PipelineConfig& c) {
                 return c.hierarchy.consistency_cost.empty() ? std::string("1") : join(c.hierarchy.consistency_cost);
               }});
  bool_key("hier.free_label", "add a free clique label", [](PipelineConfig& c) { return &c.hierarchy.use_free_label; });
  num_key("hier.free_label_cost", "unary of the free clique label",
          [](PipelineConfig& c) { return &c.hierarchy.free_label_cost; });
  k.push_back({"hier.mode", "clique term in node updates: expectation | map", false,
               [](PipelineConfig& c, const std::string& v) {
                 const std::string t = trim(v);
                 if (t == "expectation")
                   c.hierarchy.clique_update_mode = CliqueUpdateMode::Expectation;
                 else if (t == "map")
                   c.hierarchy.clique_update_mode = CliqueUpdateMode::MapHardened;
                 else
                   throw ConfigError("hier.mode must be expectation or map");
               },
               [](const PipelineConfig& c) {
                 return std::string(c.hierarchy.clique_update_mode == CliqueUpdateMode::Expectation ? "expectation" : "map");
               }});
  num_key("hier.damping", "mean-field damping in [0, 1)", [](PipelineConfig& c) { return &c.hierarchy.damping; });
  num_key("hier.pn_consistency", "consistency cost of the pn model", [](PipelineConfig& c) { return &c.pn_consistency; });

  int_key("slic.count", "target superpixel count", [](PipelineConfig& c) { return &c.slic.target_count; });
  num_key("slic.compactness", "SLIC compactness", [](PipelineConfig& c) { return &c.slic.compactness; });
  int_key("slic.iterations", "SLIC k-means iterations", [](PipelineConfig& c) { return &c.slic.iterations; });

  k.push_back({"model", "unary | dense | pn | hier", false,
               [](PipelineConfig& c, const std::string& v) { c.model = parse_model(trim(v)); },
               [](const PipelineConfig& c) { return model_name(c.model); }});
  k.push_back({"backend", "pairwise filtering: lattice | exact", false,
               [](PipelineConfig& c, const std::string& v) { c.backend = parse_backend(trim(v)); },
               [](const PipelineConfig& c) { return std::string(c.backend == FilterBackend::Lattice ? "lattice" : "exact"); }});
  int_key("iterations", "mean-field iterations", [](PipelineConfig& c) { return &c.iterations; });
  num_key("delta", "stop once the largest marginal change falls to this", [](PipelineConfig& c) { return &c.convergence_delta; });
  int_key("stride", "process every n-th frame", [](PipelineConfig& c) { return &c.stride; });
  num_key("max_depth", "projection depth limit in meters", [](PipelineConfig& c) { return &c.max_depth; });
  int_key("stop_after", "map3d: stop after this many manifest frames (-1 = all)",
          [](PipelineConfig& c) { return &c.stop_after; });
  bool_key("write_frames", "map3d: write per-frame projections", [](PipelineConfig& c) { return &c.write_frames; });
  return k;
}

}  // namespace

CrfModel parse_model(const std::string& name) {
  if (name == "unary") return CrfModel::Unary;
  if (name == "dense") return CrfModel::Dense;
  if (name == "pn") return CrfModel::Pn;
  if (name == "hier") return CrfModel::Hier;
  throw ConfigError("model must be unary, dense, pn or hier, got '" + name + "'");
}

std::string model_name(CrfModel model) {
  switch (model) {
    case CrfModel::Unary: return "unary";
    case CrfModel::Dense: return "dense";
    case CrfModel::Pn: return "pn";
    case CrfModel::Hier: return "hier";
  }
  return "hier";
}

FilterBackend parse_backend(const std::string& name) {
  if (name == "lattice") return FilterBackend::Lattice;
  if (name == "exact") return FilterBackend::ExactSum;
  throw ConfigError("backend must be lattice or exact, got '" + name + "'");
}

void PipelineConfig::validate() const {
  grid.validate();
  kernel_2d.validate();
  kernel_3d.validate();
  clique_kernel_2d.validate();
  clique_kernel_3d.validate();
  for (double k : hierarchy.consistency_cost)
    if (!(k > 0.0)) throw ConfigError("hier.consistency must be positive");
  if (!(hierarchy.damping >= 0.0 && hierarchy.damping < 1.0)) throw ConfigError("hier.damping must lie in [0, 1)");
  if (!(pn_consistency > 0.0)) throw ConfigError("hier.pn_consistency must be positive");
  if (slic.target_count < 1 || !(slic.compactness > 0.0) || slic.iterations < 0) throw ConfigError("invalid slic settings");
  if (iterations < 1) throw ConfigError("iterations must be at least 1");
  if (convergence_delta < 0.0) throw ConfigError("delta must be non-negative");
  if (stride < 1) throw ConfigError("stride must be at least 1");
  if (!(max_depth > 0.0)) throw ConfigError("max_depth must be positive");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value) {
  for (const ConfigKey& k : config_keys())
    if (k.name == key) {
      k.set(config, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(PipelineConfig& config, const std::string& text, const fs::path& base_dir) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    const auto it = std::find_if(config_keys().begin(), config_keys().end(), [&](const ConfigKey& k) { return k.name == key; });
    if (it == config_keys().end())
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (it->is_path && !value.empty() && fs::path(value).is_relative()) value = (base_dir / value).lexically_normal().string();
    it->set(config, value);
  }
}

PipelineConfig load_config(const fs::path& path) {
  PipelineConfig config;
  apply_config_text(config, read_text(path), path.parent_path());
  return config;
}

std::string dump_config(const PipelineConfig& config) {
  std::string out;
  for (const ConfigKey& k : config_keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

void load_palette(PipelineConfig& config) {
  if (!config.palette_path.empty()) config.labels = read_palette(config.palette_path);
}

LabelTable default_palette(int label_count) {
  LabelTable t;
  for (int i = 0; i < label_count; ++i) {
    // Golden-angle hue walk keeps neighbouring ids distinguishable.
    const double h = std::fmod(i * 137.508, 360.0) / 60.0;
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(h)) {
      case 0: r = 1, g = x; break;
      case 1: r = x, g = 1; break;
      case 2: g = 1, b = x; break;
      case 3: g = x, b = 1; break;
      case 4: r = x, b = 1; break;
      default: r = 1, b = x; break;
    }
    auto q = [](double c) { return static_cast<std::uint8_t>(std::lround(40 + 200 * c)); };
    t.entries.push_back({i, "class" + std::to_string(i), {q(r), q(g), q(b)}, false});
  }
  return t;
}

// ---------------------------------------------------------------- 2D

namespace {

HierarchyParams model_hierarchy(const PipelineConfig& config, CrfModel model, const KernelParams& clique_kernel,
                                int label_count) {
  HierarchyParams h = config.hierarchy;
  h.clique_kernel_params = clique_kernel;
  if (h.consistency_cost.size() == 1 && label_count != 1) h.consistency_cost.assign(label_count, h.consistency_cost[0]);
  if (model == CrfModel::Pn) {
    h.clique_update_mode = CliqueUpdateMode::MapHardened;
    h.consistency_cost.assign(label_count, config.pn_consistency);
  }
  return h;
}

void write_iterations_csv(const fs::path& path, const std::vector<IterationRecord>& records) {
  std::ostringstream out;
  out.precision(12);
  out << "iteration,energy,delta\n";
  for (const auto& r : records) out << r.iteration << ',' << r.energy << ',' << r.delta << '\n';
  write_text(path, out.str());
}

}  // namespace

Infer2dResult run_infer2d(const PipelineConfig& config, const RgbImage& image, const UnaryMap& unary,
                          const std::optional<LabelImage>& truth) {
  config.validate();
  if (!image.same_shape(unary.width, unary.height)) throw ShapeError("image and unary map differ in size");
  if (truth && !truth->same_shape(image)) throw ShapeError("truth and image differ in size");
  const int labels = unary.labels;

  Infer2dResult result;
  if (config.model == CrfModel::Unary) {
    result.labels = unary.argmax();
  } else {
    CrfProblem problem;
    problem.node_unaries = unary.costs();
    const Eigen::Index n = static_cast<Eigen::Index>(image.pixel_count());
    problem.node_features.positions.resize(n, 2);
    problem.node_features.colors.resize(n, 3);
    for (Eigen::Index p = 0; p < n; ++p) {
      problem.node_features.positions(p, 0) = static_cast<double>(p % image.width());
      problem.node_features.positions(p, 1) = static_cast<double>(p / image.width());
      for (int c = 0; c < 3; ++c) problem.node_features.colors(p, c) = image[3 * static_cast<std::size_t>(p) + c];
    }
    problem.kernel_params = config.kernel_2d;
    problem.hierarchy = model_hierarchy(config, config.model, config.clique_kernel_2d, labels);
    if (config.model == CrfModel::Dense) {
      problem.cliques = CliqueSet::none(static_cast<std::size_t>(n), labels);
    } else {
      SlicParams sp_params = config.slic;
      sp_params.target_count = std::min<int>(sp_params.target_count, static_cast<int>(n));
      const SuperpixelMap sp = slic(image, sp_params);
      result.superpixels = sp.count;
      problem.cliques = build_cliques_2d(sp, problem.node_features, problem.node_unaries);
    }
    InferenceResult inf = infer(problem, config.iterations, config.convergence_delta, config.backend);
    result.diagnostics = std::move(inf.diagnostics);
    result.labels = LabelImage(image.width(), image.height());
    const std::vector<LabelId> map = map_labels(inf.field.q_nodes);
    for (std::size_t p = 0; p < map.size(); ++p) result.labels[p] = static_cast<std::uint8_t>(map[p]);
  }

  if (truth) {
    ConfusionMatrix cm(labels);
    cm.accumulate(*truth, result.labels);
    if (cm.total() > 0) result.metrics = summarize(cm);
    result.confusion = std::move(cm);
  }
  return result;
}

Infer2dResult cmd_infer2d(const PipelineConfig& config, const fs::path& image_path, const fs::path& unary_path,
                          const std::optional<fs::path>& truth_path) {
  const RgbImage image = read_ppm(image_path);
  const UnaryMap unary = read_unary(unary_path);
  if (!image.same_shape(unary.width, unary.height))
    throw InputError(unary_path.string() + ": size differs from " + image_path.string());
  std::optional<LabelImage> truth;
  if (truth_path) {
    truth = read_pgm(*truth_path);
    if (!truth->same_shape(image)) throw InputError(truth_path->string() + ": size differs from " + image_path.string());
  }
  LabelTable palette = config.labels.size() ? config.labels : default_palette(unary.labels);
  if (palette.size() < unary.labels)
    throw InputError(unary_path.string() + ": more labels than the palette defines");

  Infer2dResult result = run_infer2d(config, image, unary, truth);
  const std::string stem = image_path.stem().string();
  fs::create_directories(config.out);
  write_pgm(config.out / (stem + ".pgm"), result.labels);
  write_ppm(config.out / (stem + "_color.ppm"), colorize(result.labels, palette));
  write_iterations_csv(config.out / (stem + "_iterations.csv"), result.diagnostics);
  if (result.metrics) {
    write_text(config.out / (stem + "_metrics.txt"), format_table(*result.metrics, palette.names()));
    write_text(config.out / (stem + "_metrics.csv"), format_csv(*result.metrics, palette.names()));
  }
  return result;
}

// ---------------------------------------------------------------- 3D

std::vector<FrameEntry> read_manifest(const fs::path& path) {
  std::vector<FrameEntry> frames;
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_relative() ? base / p : fs::path(p); };
  std::istringstream in(read_text(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    FrameEntry e;
    std::string rgb, depth, unary, truth;
    if (!(ls >> e.index >> rgb >> depth >> unary) || e.index < 0)
      throw InputError(path.string() + ": line " + std::to_string(line_no) + " needs 'index rgb depth unary [truth]'");
    e.rgb = resolve(rgb);
    e.depth = resolve(depth);
    e.unary = resolve(unary);
    if (ls >> truth) e.truth = resolve(truth);
    frames.push_back(std::move(e));
  }
  return frames;
}

namespace {

std::string frame_name(long index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06ld", index);
  return buf;
}

struct FrameData {
  RgbImage rgb;
  DepthImage depth;
  UnaryMap unary;
  std::optional<LabelImage> truth;
};

FrameData load_frame(const FrameEntry& e, const CameraIntrinsics& intrinsics, int label_count) {
  const std::string where = "frame " + std::to_string(e.index) + ": ";
  try {
    FrameData f;
    f.rgb = read_ppm(e.rgb);
    f.depth = read_depth(e.depth, intrinsics);
    f.unary = read_unary(e.unary);
    if (!f.rgb.same_shape(intrinsics.width, intrinsics.height) || !f.depth.same_shape(f.rgb) ||
        !f.rgb.same_shape(f.unary.width, f.unary.height))
      throw InputError("image, depth and unary sizes disagree");
    if (f.unary.labels != label_count)
      throw InputError(e.unary.string() + ": label count " + std::to_string(f.unary.labels) + " differs from palette");
    if (e.truth) {
      f.truth = read_pgm(*e.truth);
      if (!f.truth->same_shape(f.rgb)) throw InputError(e.truth->string() + ": size differs from the image");
    }
    return f;
  } catch (const InputError& err) {
    throw InputError(where + err.what());
  }
}

// Averages this frame's pixel distributions per hit cell and fuses each
// cell once.
void fuse_frame_labels(ScrollGrid& grid, const FrameIntegration& integ, const UnaryMap& unary) {
  std::unordered_map<std::int64_t, std::pair<std::vector<double>, int>> acc;
  for (std::size_t p = 0; p < integ.pixel_cell.size(); ++p) {
    const std::int64_t slot = integ.pixel_cell[p];
    if (slot < 0) continue;
    auto& [sum, count] = acc[slot];
    if (sum.empty()) sum.assign(unary.labels, 0.0);
    for (int l = 0; l < unary.labels; ++l) sum[l] += unary.prob(p, l);
    ++count;
  }
  for (auto& [slot, entry] : acc) {
    GridCell& cell = grid.cell(static_cast<std::size_t>(slot));
    cell = fuse_label(std::move(cell), normalize(entry.first));
  }
}

}  // namespace

ExportResult export_map(const ScrollGrid& grid, const std::vector<ArchiveRecord>& archive, const LabelTable& labels,
                        const fs::path& out_dir) {
  struct Key {
    int x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      return (static_cast<std::size_t>(static_cast<std::uint32_t>(k.x)) * 73856093u) ^
             (static_cast<std::size_t>(static_cast<std::uint32_t>(k.y)) * 19349663u) ^
             (static_cast<std::size_t>(static_cast<std::uint32_t>(k.z)) * 83492791u);
    }
  };
  // Latest state per cell; pointers stay valid because inputs outlive the map.
  std::unordered_map<Key, const GridCell*, KeyHash> latest;
  for (const ArchiveRecord& r : archive) latest[{r.global.x(), r.global.y(), r.global.z()}] = &r.cell;
  grid.for_each_cell([&](const CellRef& ref, const GridCell& cell) {
    if (cell.color_count == 0 && !cell.label_dist) return;
    latest[{ref.global.x(), ref.global.y(), ref.global.z()}] = &cell;
  });

  std::vector<std::pair<Key, const GridCell*>> cells;
  const double threshold = grid.config().occupied_threshold;
  for (const auto& [key, cell] : latest)
    if (cell->label_dist && cell->occupancy() > threshold) cells.emplace_back(key, cell);
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
    return std::tie(a.first.x, a.first.y, a.first.z) < std::tie(b.first.x, b.first.y, b.first.z);
  });

  std::vector<PlyVertex> by_label, by_rgb;
  by_label.reserve(cells.size());
  by_rgb.reserve(cells.size());
  const double res = grid.config().resolution;
  for (const auto& [key, cell] : cells) {
    PlyVertex v;
    v.x = static_cast<float>((key.x + 0.5) * res);
    v.y = static_cast<float>((key.y + 0.5) * res);
    v.z = static_cast<float>((key.z + 0.5) * res);
    const auto pal = labels.color(cell->label_dist->argmax());
    v.r = pal[0], v.g = pal[1], v.b = pal[2];
    by_label.push_back(v);
    const Eigen::Vector3d c = cell->mean_color();
    v.r = static_cast<std::uint8_t>(std::clamp(std::lround(c[0]), 0L, 255L));
    v.g = static_cast<std::uint8_t>(std::clamp(std::lround(c[1]), 0L, 255L));
    v.b = static_cast<std::uint8_t>(std::clamp(std::lround(c[2]), 0L, 255L));
    by_rgb.push_back(v);
  }
  ExportResult r;
  r.vertices = cells.size();
  r.labels_ply = out_dir / "map_labels.ply";
  r.rgb_ply = out_dir / "map_rgb.ply";
  write_ply(r.labels_ply, by_label);
  write_ply(r.rgb_ply, by_rgb);
  return r;
}

Map3dResult cmd_map3d(const PipelineConfig& config, const fs::path& manifest_path) {
  config.validate();
  const LabelTable& labels = config.labels;
  if (labels.size() == 0) throw ConfigError("map3d needs a palette");
  const std::optional<int> sky = labels.sky_id();
  if (!sky) throw ConfigError("map3d needs a sky label in the palette");
  const int label_count = labels.size();

  const std::vector<FrameEntry> manifest = read_manifest(manifest_path);
  fs::create_directories(config.out);
  Map3dResult result;
  result.snapshot = config.out / "state.snap";
  result.archive = config.out / "archive.bin";

  std::vector<Pose> poses;
  CameraIntrinsics intrinsics;
  if (!manifest.empty()) {
    if (config.calibration_path.empty() || config.poses_path.empty())
      throw ConfigError("map3d needs calibration and poses");
    poses = read_poses(config.poses_path);
    intrinsics = read_calibration(config.calibration_path);
    const RgbImage first = read_ppm(manifest.front().rgb);
    intrinsics.width = first.width();
    intrinsics.height = first.height();
    intrinsics.validate();
  }

  // Grid state: fresh, or restored from a snapshot.
  GridConfig grid_config = config.grid;
  MapSnapshot snap;
  bool resumed = false;
  if (!config.resume.empty()) {
    snap = read_snapshot(config.resume);
    if (snap.label_count != label_count) throw InputError(config.resume.string() + ": label count differs from palette");
    grid_config = snap.config;
    resumed = true;
    const fs::path old_archive = config.resume.parent_path() / "archive.bin";
    if (fs::exists(old_archive) && fs::absolute(old_archive) != fs::absolute(result.archive))
      fs::copy_file(old_archive, result.archive, fs::copy_options::overwrite_existing);
    const std::uintmax_t want = snap.archive_records * archive_record_size(label_count);
    if (!fs::exists(result.archive)) {
      if (want > 0) throw InputError(result.archive.string() + ": archive missing for resume");
      write_text(result.archive, "");
    } else if (fs::file_size(result.archive) < want) {
      throw InputError(result.archive.string() + ": archive shorter than the snapshot records");
    } else {
      fs::resize_file(result.archive, want);
    }
  }
  Eigen::Vector3i origin = Eigen::Vector3i::Zero();
  if (resumed) {
    origin = snap.origin_cell;
  } else if (!manifest.empty()) {
    const long idx = manifest.front().index;
    if (idx >= static_cast<long>(poses.size())) throw InputError("frame " + std::to_string(idx) + ": no pose");
    origin = grid_config.anchored_origin(poses[idx].camera_center());
  }
  ScrollGrid grid(grid_config, origin);
  if (resumed) grid.restore(snap.origin_cell, std::move(snap.cells));

  ArchiveWriter archive(result.archive, label_count, !resumed);
  std::size_t archive_records = resumed ? snap.archive_records : 0;
  const long start = resumed ? snap.next_frame : 0;

  const auto mode = resumed ? std::ios::app : std::ios::trunc;
  std::ofstream frames_csv(config.out / "frames.csv", mode), iter_csv(config.out / "iterations.csv", mode),
      timing_csv(config.out / "timing.csv", mode);
  frames_csv.precision(12);
  iter_csv.precision(12);
  if (!resumed) {
    frames_csv << "frame,rays,sky_pixels,invalid_pixels,cells_touched,nodes,cliques,evicted,archive_records,active_cells\n";
    iter_csv << "frame,iteration,energy,delta\n";
    timing_csv << "frame,iteration,seconds\n";
  }

  ConfusionMatrix total(label_count);
  bool any_truth = false;
  const long end = config.stop_after < 0 ? static_cast<long>(manifest.size())
                                         : std::min<long>(static_cast<long>(manifest.size()), start + config.stop_after);
  long position = start;
  for (; position < end; ++position) {
    if (position % config.stride != 0) continue;
    const FrameEntry& entry = manifest[position];
    if (entry.index >= static_cast<long>(poses.size()))
      throw InputError("frame " + std::to_string(entry.index) + ": no pose in " + config.poses_path.string());
    const Pose& pose = poses[entry.index];
    const FrameData frame = load_frame(entry, intrinsics, label_count);

    FrameReport report;
    report.index = entry.index;
    const std::vector<EvictedCell> evicted = grid.recenter(pose.camera_center());
    report.evicted = evicted.size();
    for (const EvictedCell& e : evicted)
      if (archive.write(e.global, e.cell)) ++archive_records;

    MaskImage sky_mask(frame.unary.width, frame.unary.height, 0);
    const LabelImage unary_argmax = frame.unary.argmax();
    for (std::size_t p = 0; p < sky_mask.pixel_count(); ++p) sky_mask[p] = unary_argmax[p] == *sky ? 1 : 0;

    const FrameIntegration integ =
        grid.integrate_depth_frame(frame.depth, frame.rgb, pose, intrinsics, sky_mask, static_cast<std::int32_t>(entry.index));
    report.integration = integ.stats;
    fuse_frame_labels(grid, integ, frame.unary);

    const std::vector<OccupiedCell> occupied = occupied_cells(grid);
    report.nodes = occupied.size();
    if (config.model != CrfModel::Unary && !occupied.empty()) {
      CrfProblem problem;
      const auto n = static_cast<Eigen::Index>(occupied.size());
      problem.node_unaries.resize(n, label_count);
      problem.node_features.positions.resize(n, 3);
      problem.node_features.colors.resize(n, 3);
      std::vector<std::size_t> slots(occupied.size());
      for (Eigen::Index i = 0; i < n; ++i) {
        const OccupiedCell& c = occupied[i];
        const std::vector<double> cost = neg_log(c.label_dist);
        for (int l = 0; l < label_count; ++l) problem.node_unaries(i, l) = cost[l];
        problem.node_features.positions.row(i) = c.center.transpose();
        problem.node_features.colors.row(i) = c.color.transpose();
        slots[i] = c.storage;
      }
      problem.kernel_params = config.kernel_3d;
      problem.hierarchy = model_hierarchy(config, config.model, config.clique_kernel_3d, label_count);
      if (config.model == CrfModel::Dense) {
        problem.cliques = CliqueSet::none(occupied.size(), label_count);
      } else {
        SlicParams sp_params = config.slic;
        sp_params.target_count = std::min<int>(sp_params.target_count, static_cast<int>(frame.rgb.pixel_count()));
        const SuperpixelMap sp = slic(frame.rgb, sp_params);
        problem.cliques = build_cliques_3d(sp, frame.depth, sky_mask, pose, intrinsics, grid, slots,
                                           problem.node_features, problem.node_unaries);
      }
      report.cliques = problem.cliques.size();
      InferenceResult inf = infer(problem, config.iterations, config.convergence_delta, config.backend);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd q = inf.field.q_nodes.row(i).transpose();
        grid.cell(slots[i]).label_dist = normalize(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())));
      }
      report.diagnostics = std::move(inf.diagnostics);
    }

    const Projection proj = project_to_image(grid, pose, intrinsics, config.max_depth);
    if (config.write_frames) {
      write_pgm(config.out / "frames" / (frame_name(entry.index) + ".pgm"), proj.labels);
      write_ppm(config.out / "frames_color" / (frame_name(entry.index) + ".ppm"), colorize(proj.labels, labels));
    }
    if (frame.truth) {
      ConfusionMatrix cm(label_count);
      cm.accumulate(*frame.truth, proj.labels);
      total.merge(cm);
      any_truth = true;
      report.confusion = std::move(cm);
    }

    report.archive_records = archive_records;
    report.active_cells = grid.active_cell_count();
    const IntegrationStats& s = report.integration;
    frames_csv << report.index << ',' << s.rays << ',' << s.sky_pixels << ',' << s.invalid_pixels << ','
               << s.cells_touched << ',' << report.nodes << ',' << report.cliques << ',' << report.evicted << ','
               << report.archive_records << ',' << report.active_cells << '\n';
    for (const IterationRecord& r : report.diagnostics) {
      iter_csv << report.index << ',' << r.iteration << ',' << r.energy << ',' << r.delta << '\n';
      timing_csv << report.index << ',' << r.iteration << ',' << r.seconds << '\n';
    }
    result.frames.push_back(std::move(report));
  }
  archive.flush();

  result.next_frame = position;
  result.finished = position >= static_cast<long>(manifest.size());
  MapSnapshot out_snap;
  out_snap.config = grid.config();
  out_snap.label_count = label_count;
  out_snap.origin_cell = grid.origin_cell();
  out_snap.cells = grid.storage();
  out_snap.next_frame = position;
  out_snap.archive_records = archive_records;
  write_snapshot(result.snapshot, out_snap);

  if (any_truth) {
    result.confusion = total;
    if (total.total() > 0) {
      const MetricsSummary summary = summarize(total);
      write_text(config.out / "metrics.txt", format_table(summary, labels.names()));
      write_text(config.out / "metrics.csv", format_csv(summary, labels.names()));
    }
  }
  if (result.finished) {
    const ExportResult exp = export_map(grid, read_archive(result.archive, label_count), labels, config.out);
    result.map_vertices = exp.vertices;
  }
  return result;
}

// ---------------------------------------------------------------- eval / export

EvalResult cmd_eval(const PipelineConfig& config, const fs::path& prediction_dir, const fs::path& truth_dir) {
  if (!fs::is_directory(truth_dir)) throw InputError(truth_dir.string() + ": not a directory");
  if (!fs::is_directory(prediction_dir)) throw InputError(prediction_dir.string() + ": not a directory");
  std::vector<fs::path> truths;
  for (const auto& e : fs::directory_iterator(truth_dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") truths.push_back(e.path());
  std::sort(truths.begin(), truths.end());

  EvalResult result;
  std::vector<std::pair<LabelImage, LabelImage>> pairs;
  int max_label = -1;
  for (const fs::path& t : truths) {
    const fs::path p = prediction_dir / t.filename();
    if (!fs::exists(p)) {
      result.missing.push_back(t.filename().string());
      continue;
    }
    LabelImage truth = read_pgm(t), pred = read_pgm(p);
    if (!truth.same_shape(pred)) throw InputError(p.string() + ": size differs from " + t.string());
    for (const LabelImage* img : {&truth, &pred})
      for (std::uint8_t v : img->data())
        if (v != kUnlabeled) max_label = std::max<int>(max_label, v);
    pairs.emplace_back(std::move(truth), std::move(pred));
  }
  const int label_count = config.labels.size() ? config.labels.size() : max_label + 1;
  if (max_label >= label_count) throw InputError("label id " + std::to_string(max_label) + " is not in the palette");
  result.confusion = ConfusionMatrix(std::max(label_count, 0));
  for (const auto& [truth, pred] : pairs) result.confusion.accumulate(truth, pred);
  result.pairs = pairs.size();

  fs::create_directories(config.out);
  const std::vector<std::string> names = config.labels.size() ? config.labels.names() : default_palette(label_count).names();
  std::string missing_text;
  for (const std::string& m : result.missing) missing_text += m + "\n";
  write_text(config.out / "missing.txt", missing_text);
  if (result.confusion.total() > 0) {
    result.summary = summarize(result.confusion);
    write_text(config.out / "metrics.txt", format_table(*result.summary, names));
    write_text(config.out / "metrics.csv", format_csv(*result.summary, names));
  }
  return result;
}

ExportResult cmd_export(const PipelineConfig& config, const fs::path& archive, const fs::path& snapshot) {
  MapSnapshot snap = read_snapshot(snapshot);
  ScrollGrid grid(snap.config, snap.origin_cell);
  grid.restore(snap.origin_cell, std::move(snap.cells));
  const LabelTable labels = config.labels.size() ? config.labels : default_palette(snap.label_count);
  if (labels.size() < snap.label_count) throw InputError(snapshot.string() + ": more labels than the palette defines");
  const std::vector<ArchiveRecord> records = read_archive(archive, snap.label_count);
  fs::create_directories(config.out);
  return export_map(grid, records, labels, config.out);
}

}  // namespace semmap
