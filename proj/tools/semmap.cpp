// semmap: 2D CRF inference, incremental 3D semantic mapping, evaluation and
// map export.

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "semmap/errors.hpp"
#include "semmap/pipeline.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitInput = 2;
constexpr int kExitIncomplete = 3;

void print_summary(const semmap::MetricsSummary& s) {
  std::cout << "global accuracy " << s.global_acc << ", mean IoU " << s.mean_iou << ", mean recall "
            << s.mean_acc_recall << ", mean precision " << s.mean_acc_precision << ", F.W. IoU " << s.fw_iou << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic occupancy mapping with hierarchical dense CRF inference"};
  app.require_subcommand(1);

  std::string config_path;
  bool dump = false;
  app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_flag("--dump-config", dump, "print the effective configuration before running");

  // Every config key doubles as a --key flag; flags override the file.
  std::map<std::string, std::string> overrides;
  for (const semmap::ConfigKey& key : semmap::config_keys())
    app.add_option("--" + key.name, overrides[key.name], key.help);

  auto* infer2d = app.add_subcommand("infer2d", "CRF inference on one image with a unary map");
  std::string image, unary, truth;
  infer2d->add_option("image", image, "RGB image (PPM)")->required();
  infer2d->add_option("unary", unary, "unary map (UNRY)")->required();
  infer2d->add_option("--truth", truth, "ground-truth label image (PGM)");

  auto* map3d = app.add_subcommand("map3d", "incremental 3D mapping over a frame manifest");
  std::string manifest;
  map3d->add_option("manifest", manifest, "lines of 'index rgb depth unary [truth]'")->required();

  auto* eval = app.add_subcommand("eval", "metrics over prediction / truth label images paired by name");
  std::string pred_dir, truth_dir;
  eval->add_option("predictions", pred_dir, "directory of predicted label images")->required();
  eval->add_option("truth", truth_dir, "directory of ground-truth label images")->required();

  auto* exp = app.add_subcommand("export", "PLY point clouds from an archive and a grid snapshot");
  std::string archive, snapshot;
  exp->add_option("archive", archive, "evicted-cell archive")->required();
  exp->add_option("snapshot", snapshot, "grid snapshot")->required();

  for (auto* sub : {infer2d, map3d, eval, exp}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    semmap::PipelineConfig config = config_path.empty() ? semmap::PipelineConfig{} : semmap::load_config(config_path);
    for (const semmap::ConfigKey& key : semmap::config_keys())
      if (app.count("--" + key.name) > 0) key.set(config, overrides[key.name]);
    semmap::load_palette(config);
    config.validate();
    if (dump) std::cout << semmap::dump_config(config);

    if (*infer2d) {
      std::optional<semmap::fs::path> truth_path;
      if (!truth.empty()) truth_path = truth;
      const auto r = semmap::cmd_infer2d(config, image, unary, truth_path);
      std::cout << "model " << semmap::model_name(config.model) << ", " << r.diagnostics.size() << " iterations";
      if (r.superpixels > 0) std::cout << ", " << r.superpixels << " superpixels";
      std::cout << '\n';
      if (r.metrics) print_summary(*r.metrics);
    } else if (*map3d) {
      const auto r = semmap::cmd_map3d(config, manifest);
      std::cout << r.frames.size() << " frames processed, next manifest position " << r.next_frame
                << (r.finished ? ", finished" : ", stopped") << '\n';
      if (r.finished) std::cout << r.map_vertices << " map vertices\n";
      if (r.confusion && r.confusion->total() > 0) print_summary(semmap::summarize(*r.confusion));
    } else if (*eval) {
      const auto r = semmap::cmd_eval(config, pred_dir, truth_dir);
      std::cout << r.pairs << " pairs evaluated\n";
      if (r.summary) print_summary(*r.summary);
      for (const std::string& m : r.missing) std::cerr << "missing prediction: " << m << '\n';
      if (!r.complete()) return kExitIncomplete;
    } else if (*exp) {
      const auto r = semmap::cmd_export(config, archive, snapshot);
      std::cout << r.vertices << " vertices written to " << r.labels_ply.string() << " and " << r.rgb_ply.string()
                << '\n';
    }
  } catch (const semmap::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return 0;
}
