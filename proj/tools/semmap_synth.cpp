// semmap-synth: writes procedural fixtures with analytic ground truth.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "semmap/errors.hpp"
#include "semmap/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Procedural test scenes for semmap"};
  app.require_subcommand(1);
  std::uint32_t seed = 1;
  app.add_option("--seed", seed, "random seed");

  auto* region = app.add_subcommand("three-region", "noisy three-region image with unaries and truth");
  std::string region_dir;
  int size = 128;
  double flip = 0.25;
  region->add_option("dir", region_dir, "output directory")->required();
  region->add_option("--size", size, "image edge in pixels")->check(CLI::PositiveNumber);
  region->add_option("--flip", flip, "unary label-flip rate")->check(CLI::Range(0.0, 1.0));

  auto* corridor = app.add_subcommand("corridor", "corridor frame sequence with poses, calibration and manifest");
  std::string corridor_dir;
  int frames = 20;
  corridor->add_option("dir", corridor_dir, "output directory")->required();
  corridor->add_option("--frames", frames, "frame count")->check(CLI::NonNegativeNumber);

  for (auto* sub : {region, corridor}) sub->fallthrough();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*region) {
      semmap::synth::write_three_region(region_dir, semmap::synth::make_three_region(seed, size, flip));
    } else {
      semmap::synth::write_corridor_dataset(corridor_dir, semmap::synth::Corridor{}, frames, seed);
    }
  } catch (const semmap::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
