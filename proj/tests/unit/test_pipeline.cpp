#include <doctest.h>

#include <fstream>

#include "../support/temp_dir.hpp"
#include "semmap/errors.hpp"
#include "semmap/pipeline.hpp"
#include "semmap/synthetic.hpp"

using namespace semmap;
using semmap::testing::TempDir;

namespace {

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double accuracy(const LabelImage& a, const LabelImage& b) {
  std::size_t same = 0;
  for (std::size_t p = 0; p < a.pixel_count(); ++p) same += a[p] == b[p];
  return static_cast<double>(same) / static_cast<double>(a.pixel_count());
}

PipelineConfig corridor_config(const fs::path& dir) {
  PipelineConfig c = load_config(dir / "config.txt");
  load_palette(c);
  // A smaller box keeps the test quick.
  c.grid.dims = {80, 80, 30};
  c.iterations = 2;
  return c;
}

}  // namespace

TEST_CASE("config text, flags and dump") {
  TempDir dir("cfg");
  write_text(dir / "c.txt",
             "# comment\nmodel = dense\niterations = 3 # trailing\ngrid.dims = 10, 20, 30\n"
             "palette = sub/pal.txt\nkernel3d.theta_alpha = 0.7\nhier.mode = map\nbackend = exact\n");
  PipelineConfig c = load_config(dir / "c.txt");
  CHECK(c.model == CrfModel::Dense);
  CHECK(c.iterations == 3);
  CHECK(c.grid.dims == std::array<int, 3>{10, 20, 30});
  CHECK(c.palette_path == (dir.path() / "sub/pal.txt").lexically_normal());
  CHECK(c.kernel_3d.theta_alpha == 0.7);
  CHECK(c.hierarchy.clique_update_mode == CliqueUpdateMode::MapHardened);
  CHECK(c.backend == FilterBackend::ExactSum);

  set_config_value(c, "iterations", "1");  // flags are applied after the file
  CHECK(c.iterations == 1);

  c.out = dir / "out";  // relative paths would re-resolve against the base dir
  PipelineConfig round;
  apply_config_text(round, dump_config(c), dir.path());
  CHECK(dump_config(round) == dump_config(c));

  CHECK_THROWS_AS(set_config_value(c, "nope", "1"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "iterations", "two"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "model", "crf"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "grid.dims", "1,2"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "iterations 4\n", dir.path()), ConfigError);
  PipelineConfig bad;
  bad.stride = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("every config key round-trips through its flag text") {
  PipelineConfig a;
  for (const ConfigKey& k : config_keys()) {
    PipelineConfig b;
    CHECK_NOTHROW(k.set(b, k.get(a)));
    CHECK(k.get(b) == k.get(a));
  }
}

TEST_CASE("unary model is the per-pixel argmax") {
  const synth::Scene2d s = synth::make_three_region(1, 48);
  PipelineConfig c;
  c.model = CrfModel::Unary;
  const Infer2dResult r = run_infer2d(c, s.image, s.unary, s.truth);
  CHECK(r.labels == s.unary.argmax());
  CHECK(r.diagnostics.empty());
  REQUIRE(r.metrics);
  CHECK(r.metrics->global_acc == doctest::Approx(accuracy(r.labels, s.truth)));
}

TEST_CASE("CRF models clean up label-flip noise") {
  const synth::Scene2d s = synth::make_three_region(2, 64);
  PipelineConfig c;
  c.model = CrfModel::Unary;
  const double base = accuracy(run_infer2d(c, s.image, s.unary).labels, s.truth);
  for (CrfModel m : {CrfModel::Dense, CrfModel::Pn, CrfModel::Hier}) {
    c.model = m;
    const Infer2dResult r = run_infer2d(c, s.image, s.unary);
    CHECK(r.diagnostics.size() == 5);
    CHECK(accuracy(r.labels, s.truth) > base + 0.1);
    if (m != CrfModel::Dense) CHECK(r.superpixels > 0);
  }
}

TEST_CASE("infer2d files and errors") {
  TempDir dir("infer2d");
  const synth::Scene2d s = synth::make_three_region(3, 32);
  synth::write_three_region(dir.path(), s);
  PipelineConfig c;
  c.out = dir / "out";
  const Infer2dResult r = cmd_infer2d(c, dir / "image.ppm", dir / "unary.unry", dir / "truth.pgm");
  CHECK(read_pgm(dir / "out/image.pgm") == r.labels);
  CHECK(fs::exists(dir / "out/image_color.ppm"));
  CHECK(fs::exists(dir / "out/image_metrics.csv"));
  CHECK(read_text(dir / "out/image_iterations.csv").rfind("iteration,energy,delta\n", 0) == 0);

  write_ppm(dir / "small.ppm", RgbImage(8, 8));
  CHECK_THROWS_AS(cmd_infer2d(c, dir / "small.ppm", dir / "unary.unry"), InputError);
  CHECK_THROWS_AS(cmd_infer2d(c, dir / "nope.ppm", dir / "unary.unry"), InputError);
}

TEST_CASE("empty manifest gives an empty map") {
  TempDir dir("empty");
  write_text(dir / "manifest.txt", "# nothing\n");
  PipelineConfig c;
  c.labels = synth::Corridor{}.palette();
  c.out = dir / "out";
  const Map3dResult r = cmd_map3d(c, dir / "manifest.txt");
  CHECK(r.finished);
  CHECK(r.frames.empty());
  CHECK(r.map_vertices == 0);
  CHECK(read_ply(dir / "out/map_labels.ply").empty());
  CHECK(read_ply(dir / "out/map_rgb.ply").empty());
}

TEST_CASE("map3d input checks") {
  TempDir dir("map3d_bad");
  synth::write_corridor_dataset(dir.path(), synth::Corridor{}, 2, 1);
  PipelineConfig c = corridor_config(dir.path());
  c.out = dir / "out";

  PipelineConfig no_sky = c;
  no_sky.labels = default_palette(5);
  CHECK_THROWS_AS(cmd_map3d(no_sky, dir / "manifest.txt"), ConfigError);

  write_text(dir / "bad_manifest.txt", "0 frames/000000.ppm frames/000000.depth frames/000000.unry\n7 a b c\n");
  try {
    cmd_map3d(c, dir / "bad_manifest.txt");
    FAIL("expected an input error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("frame 7") != std::string::npos);
  }
  write_text(dir / "short_manifest.txt", "0 frames/000000.ppm\n");
  CHECK_THROWS_AS(read_manifest(dir / "short_manifest.txt"), InputError);
}

TEST_CASE("map3d is deterministic and restartable") {
  TempDir dir("map3d");
  synth::write_corridor_dataset(dir.path(), synth::Corridor{}, 6, 4);
  PipelineConfig c = corridor_config(dir.path());

  c.out = dir / "a";
  const Map3dResult a = cmd_map3d(c, dir / "manifest.txt");
  CHECK(a.finished);
  CHECK(a.frames.size() == 6);
  CHECK(a.map_vertices > 0);
  c.out = dir / "b";
  cmd_map3d(c, dir / "manifest.txt");
  for (const char* f : {"map_labels.ply", "map_rgb.ply", "frames.csv", "iterations.csv", "archive.bin", "state.snap",
                        "frames/000003.pgm", "metrics.csv"})
    CHECK_MESSAGE(bytes_of(dir / "a" / f) == bytes_of(dir / "b" / f), f);

  // Split after three frames and resume into the same directory.
  c.out = dir / "split";
  c.stop_after = 3;
  const Map3dResult first = cmd_map3d(c, dir / "manifest.txt");
  CHECK_FALSE(first.finished);
  CHECK(first.next_frame == 3);
  c.stop_after = -1;
  c.resume = dir / "split/state.snap";
  const Map3dResult second = cmd_map3d(c, dir / "manifest.txt");
  CHECK(second.finished);
  CHECK(second.frames.size() == 3);
  const MapSnapshot whole = read_snapshot(dir / "a/state.snap");
  const MapSnapshot resumed = read_snapshot(dir / "split/state.snap");
  REQUIRE(whole.cells.size() == resumed.cells.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < whole.cells.size(); ++i) {
    const auto& x = whole.cells[i].label_dist;
    const auto& y = resumed.cells[i].label_dist;
    REQUIRE(x.has_value() == y.has_value());
    if (!x) continue;
    for (std::size_t l = 0; l < x->size(); ++l) worst = std::max(worst, std::abs((*x)[l] - (*y)[l]));
  }
  CHECK(worst <= 1e-6);
  CHECK(bytes_of(dir / "a/map_labels.ply") == bytes_of(dir / "split/map_labels.ply"));
}

TEST_CASE("stride skips frames") {
  TempDir dir("stride");
  synth::write_corridor_dataset(dir.path(), synth::Corridor{}, 5, 2);
  PipelineConfig c = corridor_config(dir.path());
  c.stride = 4;
  c.iterations = 1;
  c.out = dir / "out";
  const Map3dResult r = cmd_map3d(c, dir / "manifest.txt");
  REQUIRE(r.frames.size() == 2);
  CHECK(r.frames[0].index == 0);
  CHECK(r.frames[1].index == 4);
  CHECK(r.frames[1].diagnostics.size() == 1);
}

TEST_CASE("eval pairs files by name") {
  TempDir dir("eval");
  LabelImage a(2, 2), b(2, 2);
  a.data() = {0, 0, 1, 1};
  b.data() = {0, 1, 1, 1};
  write_pgm(dir / "truth/x.pgm", a);
  write_pgm(dir / "truth/y.pgm", a);
  write_pgm(dir / "pred/x.pgm", a);
  PipelineConfig c;
  c.out = dir / "out";
  const EvalResult partial = cmd_eval(c, dir / "pred", dir / "truth");
  CHECK_FALSE(partial.complete());
  CHECK(partial.missing == std::vector<std::string>{"y.pgm"});
  REQUIRE(partial.summary);
  CHECK(partial.summary->global_acc == 1.0);
  CHECK(partial.summary->mean_iou == 1.0);

  write_pgm(dir / "pred/y.pgm", b);
  const EvalResult full = cmd_eval(c, dir / "pred", dir / "truth");
  CHECK(full.complete());
  CHECK(full.pairs == 2);
  CHECK(full.summary->global_acc == 7.0 / 8.0);
  CHECK(read_text(dir / "out/metrics.csv").find("summary,") != std::string::npos);

  LabelImage disjoint(2, 2, 2);
  write_pgm(dir / "pred2/x.pgm", disjoint);
  write_pgm(dir / "pred2/y.pgm", disjoint);
  const EvalResult zero = cmd_eval(c, dir / "pred2", dir / "truth");
  CHECK(zero.summary->mean_iou == 0.0);
}

TEST_CASE("export writes one vertex per occupied labeled cell") {
  TempDir dir("export");
  GridConfig g;
  g.dims = {4, 4, 4};
  g.resolution = 0.1;
  ScrollGrid grid(g);
  GridCell& cell = grid.cell(*grid.global_to_cell({0, 0, 0}));
  cell.log_odds = 2.0f;
  cell.color_sum = {20, 40, 60};
  cell.color_count = 2;
  cell.label_dist = normalize(std::vector<double>{0.2, 0.8});
  GridCell& unlabeled = grid.cell(*grid.global_to_cell({1, 0, 0}));
  unlabeled.log_odds = 2.0f;
  unlabeled.color_count = 1;

  // An older archived copy of the same cell loses to the grid.
  ArchiveRecord old{{0, 0, 0}, cell};
  old.cell.label_dist = normalize(std::vector<double>{0.9, 0.1});
  ArchiveRecord elsewhere{{-10, 0, 0}, cell};

  LabelTable t;
  t.entries = {{0, "a", {1, 1, 1}, false}, {1, "b", {9, 8, 7}, false}};
  const ExportResult r = export_map(grid, {old, elsewhere}, t, dir.path());
  CHECK(r.vertices == 2);
  const auto labels = read_ply(r.labels_ply);
  const auto rgb = read_ply(r.rgb_ply);
  REQUIRE(labels.size() == 2);
  CHECK(labels[0].x == doctest::Approx(-0.95f));
  CHECK(labels[1].x == doctest::Approx(0.05f));
  CHECK(labels[1].y == doctest::Approx(0.05f));
  CHECK(labels[1].z == doctest::Approx(0.05f));
  CHECK(labels[1].r == 9);
  CHECK(rgb[1].r == 10);
  CHECK(rgb[1].b == 30);

  // Snapshot plus archive through the command wrapper.
  MapSnapshot snap;
  snap.config = g;
  snap.label_count = 2;
  snap.cells = grid.storage();
  write_snapshot(dir / "s.snap", snap);
  PipelineConfig c;
  c.labels = t;
  c.out = dir / "cmd";
  CHECK(cmd_export(c, dir / "absent.bin", dir / "s.snap").vertices == 1);
  CHECK(read_ply(dir / "cmd/map_labels.ply")[0].r == 9);
}
