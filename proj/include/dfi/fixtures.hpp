#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dfi/network.hpp"

namespace dfi {

/// Golden activation fixtures written by the weights exporter. A fixture
/// directory holds manifest.txt (key=value lines) plus one `<layer>.f32` file
/// per captured layer: an ASCII "n c h w" line followed by raw f32 LE data.
struct FixtureSet {
  std::map<std::string, std::string> manifest;
  std::filesystem::path image;  // resolved against the fixture directory
  double tolerance = 1e-3;
  std::vector<std::string> layers;
  std::map<std::string, Tensor> activations;
};

FixtureSet load_fixture_set(const std::filesystem::path& dir);
void save_fixture_set(const FixtureSet& fixtures, const std::filesystem::path& dir);

Tensor read_fixture_tensor(const std::filesystem::path& path);
void write_fixture_tensor(const std::filesystem::path& path, const Tensor& t);

/// Engine layer compared against a fixture layer: convX_Y fixtures hold
/// post-ReLU values and map to reluX_Y.
std::string engine_layer_for(const std::string& fixture_layer);

struct FixtureComparison {
  std::string layer;
  double max_rel_error = 0.0;  // max|a-b| / max|b|
  bool passed = false;
};

/// Runs the engine on the fixture image with the same resize and
/// preprocessing rules and compares every layer.
std::vector<FixtureComparison> compare_with_fixture(const Network& net,
                                                    const FixtureSet& fixtures);

}  // namespace dfi
