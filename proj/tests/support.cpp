#include "support.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <unistd.h>

#include "dfi/image_io.hpp"

namespace dfi::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("dfi-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

const Topology& tiny_topology() {
  static const Topology t{{"conv1_1", 3, 4, 3},
                          {"conv2_1", 4, 6, 3},
                          {"conv3_1", 6, 8, 3},
                          {"conv4_1", 8, 8, 3},
                          {"conv5_1", 8, 8, 3}};
  return t;
}

Network tiny_network(std::uint64_t seed) {
  Network net = random_network(tiny_topology(), seed);
  normalize_activations(net, synthetic_face(seed, {}, 200, 200));
  return net;
}

Tensor synthetic_face(std::uint64_t seed, FaceTraits traits, std::size_t h, std::size_t w) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double cx = 0.5 + 0.05 * u(rng);
  const double cy = 0.5 + 0.05 * u(rng);
  const double skin[3] = {200 + 30 * u(rng), 160 + 25 * u(rng), 130 + 25 * u(rng)};
  const double bg[3] = {90 + 60 * u(rng), 110 + 60 * u(rng), 140 + 60 * u(rng)};
  const double light = 0.3 * u(rng);
  std::normal_distribution<double> grain(0.0, 3.0);

  Tensor img({1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = (x + 0.5) / w;
      const double py = (y + 0.5) / h;
      const double fx = (px - cx) / 0.30;
      const double fy = (py - cy) / 0.38;
      double rgb[3];
      const bool face = fx * fx + fy * fy < 1.0;
      for (int c = 0; c < 3; ++c) {
        rgb[c] = face ? skin[c] * (1.0 + light * (px - cx)) : bg[c] * (0.8 + 0.4 * py);
      }
      if (face) {
        // Eyes.
        for (double ex : {-0.35, 0.35}) {
          const double dx = (fx - ex) / 0.12;
          const double dy = (fy + 0.25) / 0.08;
          if (dx * dx + dy * dy < 1.0) rgb[0] = rgb[1] = rgb[2] = 40.0;
          if (traits.glasses && std::abs(fx - ex) < 0.22 && std::abs(fy + 0.25) < 0.16 &&
              (std::abs(fx - ex) > 0.17 || std::abs(fy + 0.25) > 0.11)) {
            rgb[0] = rgb[1] = rgb[2] = 15.0;
          }
        }
        if (traits.glasses && std::abs(fx) < 0.13 && std::abs(fy + 0.25) < 0.03) {
          rgb[0] = rgb[1] = rgb[2] = 15.0;
        }
        // Mouth: a parabola bending up when smiling.
        if (std::abs(fx) < 0.4) {
          const double curve = (traits.smiling ? 0.9 : -0.4) * fx * fx;
          const double mouth_y = 0.45 - curve;
          if (std::abs(fy - mouth_y) < (traits.smiling ? 0.07 : 0.04)) {
            rgb[0] = 150;
            rgb[1] = 40;
            rgb[2] = 50;
          }
        }
      }
      for (int c = 0; c < 3; ++c) {
        img.at(0, c, y, x) = static_cast<float>(std::clamp(rgb[c] + grain(rng), 0.0, 255.0));
      }
    }
  }
  return img;
}

SyntheticDataset write_face_dataset(const fs::path& dir, std::size_t count, std::uint64_t seed,
                                    std::size_t h, std::size_t w) {
  fs::create_directories(dir);
  SyntheticDataset ds;
  ds.attributes_csv = dir / "attributes.csv";
  std::ofstream csv(ds.attributes_csv);
  csv << "path,Smiling,Eyeglasses\n";
  for (std::size_t i = 0; i < count; ++i) {
    const FaceTraits t{i % 2 == 1, (i / 2) % 2 == 1};
    char name[32];
    std::snprintf(name, sizeof name, "face_%03zu.png", i);
    const fs::path p = dir / name;
    write_png_rgb(p, synthetic_face(seed * 1000 + i, t, h, w));
    ds.images.push_back(p);
    ds.traits.push_back(t);
    csv << name << ',' << (t.smiling ? "1" : "-1") << ',' << (t.glasses ? "1" : "-1") << '\n';
  }
  return ds;
}

}  // namespace dfi::testing
