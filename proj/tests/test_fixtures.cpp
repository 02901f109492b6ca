#include <gtest/gtest.h>

#include <fstream>

#include "dfi/error.hpp"
#include "dfi/featurespace.hpp"
#include "dfi/fixtures.hpp"
#include "dfi/image_io.hpp"
#include "support.hpp"

namespace dfi {
namespace {

const std::vector<std::string> kFixtureLayers{"conv3_1", "conv4_1", "conv5_1", "pool5"};

// Fixture set produced by the engine itself, in the exporter's layout.
FixtureSet self_fixtures(const Network& net, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Tensor rgb = testing::synthetic_face(12, {true, true}, 200, 200);
  write_png_rgb(dir / "face.png", rgb);
  FixtureSet f;
  f.manifest["source"] = "self";
  f.image = dir / "face.png";
  f.layers = kFixtureLayers;
  CaptureSet capture;
  for (const auto& l : f.layers) capture.push_back(engine_layer_for(l));
  const auto acts = net.forward_capture(preprocess(net.preprocessing(), read_png_rgb(f.image)), capture);
  for (const auto& l : f.layers) f.activations[l] = acts.at(engine_layer_for(l));
  return f;
}

TEST(FixtureTensor, RoundTrip) {
  testing::TempDir dir;
  std::mt19937_64 rng(2);
  const Tensor t = testing::uniform_tensor<float>({1, 4, 3, 5}, rng, -2, 2);
  write_fixture_tensor(dir / "x.f32", t);
  const Tensor back = read_fixture_tensor(dir / "x.f32");
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), t.data().begin()));
}

TEST(FixtureTensor, MalformedFilesAreFormatErrors) {
  testing::TempDir dir;
  const auto write = [&](const std::string& name, const std::string& bytes) {
    std::ofstream(dir / name, std::ios::binary) << bytes;
    return dir / name;
  };
  EXPECT_THROW(read_fixture_tensor(write("a", "1 1 1 1")), FormatError);
  EXPECT_THROW(read_fixture_tensor(write("b", "1 1 x 1\nabcd")), FormatError);
  EXPECT_THROW(read_fixture_tensor(write("c", "1 1 1 2\nabcd")), FormatError);
  EXPECT_THROW(read_fixture_tensor(write("d", "1 1 1 1 7\nabcd")), FormatError);
  EXPECT_THROW(read_fixture_tensor(write("e", "1 1 1 1\nabcde")), FormatError);
  EXPECT_NO_THROW(read_fixture_tensor(write("f", "1 1 1 1\nabcd")));
}

TEST(FixtureSet, EngineLayerMapping) {
  EXPECT_EQ(engine_layer_for("conv3_1"), "relu3_1");
  EXPECT_EQ(engine_layer_for("pool5"), "pool5");
  EXPECT_EQ(engine_layer_for("relu4_1"), "relu4_1");
}

TEST(FixtureSet, ManifestErrors) {
  testing::TempDir dir;
  EXPECT_THROW(load_fixture_set(dir.path()), UsageError);
  std::ofstream(dir / "manifest.txt") << "image=face.png\n";
  EXPECT_THROW(load_fixture_set(dir.path()), FormatError);
  std::ofstream(dir / "manifest.txt") << "image=face.png\nlayers=conv3_1\nnot a pair\n";
  EXPECT_THROW(load_fixture_set(dir.path()), FormatError);
  std::ofstream(dir / "manifest.txt") << "image=face.png\nlayers=conv3_1\ntolerance=abc\n";
  EXPECT_THROW(load_fixture_set(dir.path()), FormatError);
}

TEST(FixtureSet, ReloadRoundTripAndSelfComparison) {
  testing::TempDir dir;
  const Network net = testing::tiny_network(6);
  const FixtureSet made = self_fixtures(net, dir / "set");
  save_fixture_set(made, dir / "set");
  const FixtureSet f = load_fixture_set(dir / "set");
  EXPECT_EQ(f.layers, kFixtureLayers);
  EXPECT_EQ(f.tolerance, 1e-3);
  EXPECT_EQ(f.manifest.at("source"), "self");
  for (const auto& l : f.layers) {
    const Tensor& a = f.activations.at(l);
    ASSERT_EQ(a.shape(), made.activations.at(l).shape());
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), made.activations.at(l).data().begin()));
    for (float v : a.data()) ASSERT_GE(v, 0.0f) << l;
  }
  for (const auto& c : compare_with_fixture(net, f)) {
    EXPECT_TRUE(c.passed) << c.layer;
    EXPECT_EQ(c.max_rel_error, 0.0) << c.layer;
  }
}

TEST(FixtureSet, ComparisonDetectsADifferentModel) {
  testing::TempDir dir;
  const Network net = testing::tiny_network(6);
  FixtureSet f = self_fixtures(net, dir / "set");
  f.activations.at("conv4_1")[0] += 1.0f + f.activations.at("conv4_1")[0];
  for (const auto& c : compare_with_fixture(net, f)) {
    EXPECT_EQ(c.passed, c.layer != "conv4_1") << c.layer;
  }
  const auto other = compare_with_fixture(testing::tiny_network(7), f);
  EXPECT_TRUE(std::none_of(other.begin(), other.end(), [](const auto& c) { return c.passed; }));
  f.activations.at("conv3_1") = Tensor({1, 1, 2, 2});
  EXPECT_THROW(compare_with_fixture(net, f), ShapeError);
}

}  // namespace
}  // namespace dfi
