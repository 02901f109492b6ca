#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dfi/network.hpp"

namespace dfi::testing {

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename T>
BasicTensor<T> uniform_tensor(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  BasicTensor<T> t(s);
  for (T& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

template <typename T>
BasicTensor<T> normal_tensor(Shape s, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  BasicTensor<T> t(s);
  for (T& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

/// One narrow conv per block (conv1_1 ... conv5_1), enough for phi and pool5.
const Topology& tiny_topology();
Network tiny_network(std::uint64_t seed);

struct FaceTraits {
  bool smiling = false;
  bool glasses = false;
};

/// Cartoon face with per-seed jitter in position, colour and lighting.
Tensor synthetic_face(std::uint64_t seed, FaceTraits traits, std::size_t h = 64,
                      std::size_t w = 64);

struct SyntheticDataset {
  std::vector<std::filesystem::path> images;
  std::vector<FaceTraits> traits;
  std::filesystem::path attributes_csv;  // header: path,Smiling,Eyeglasses
};

/// `count` faces cycling through all trait combinations.
SyntheticDataset write_face_dataset(const std::filesystem::path& dir, std::size_t count,
                                    std::uint64_t seed, std::size_t h = 64, std::size_t w = 64);

}  // namespace dfi::testing
