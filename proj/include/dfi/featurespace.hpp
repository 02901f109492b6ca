#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dfi/network.hpp"

namespace dfi {

struct FeatureSegment {
  std::string layer;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return c * h * w; }
  friend bool operator==(const FeatureSegment&, const FeatureSegment&) = default;
};

using FeatureLayout = std::vector<FeatureSegment>;

std::size_t layout_size(const FeatureLayout& layout);
std::string to_string(const FeatureLayout& layout);

/// Flattened concatenation of captured activations; `layout` records the
/// segment order.
template <typename T>
struct BasicFeatureVector {
  std::vector<T> data;
  FeatureLayout layout;
};

using FeatureVector = BasicFeatureVector<float>;
using Pool5Descriptor = std::vector<float>;

/// Post-ReLU layers forming the deep feature representation.
const CaptureSet& phi_layers();
inline constexpr const char* kPool5Layer = "pool5";

/// Images whose short side is below this are upsampled before mapping.
inline constexpr std::size_t kMinWorkingSide = 200;

/// Working resolution for an h x w image: unchanged if the short side is
/// already >= 200, otherwise scaled so the short side is exactly 200 (long
/// side rounded half-up).
std::pair<std::size_t, std::size_t> working_size(std::size_t h, std::size_t w);
Tensor to_working_resolution(const Tensor& rgb);

template <typename T>
BasicFeatureVector<T> flatten(const ActivationMap<T>& captures,
                              const CaptureSet& order);

template <typename T>
ActivationMap<T> unflatten(std::span<const T> data, const FeatureLayout& layout);

/// phi on an already preprocessed network input (no resize).
template <typename T>
BasicFeatureVector<T> phi_input(const BasicNetwork<T>& net,
                                const BasicTensor<T>& input);

/// phi on an RGB image in [0, 255], applying the working-resolution rule.
FeatureVector phi(const Network& net, const Tensor& rgb);

// phi after resizing the RGB image to exactly h x w.
FeatureVector phi_at(const Network& net, const Tensor& rgb, std::size_t h,
                     std::size_t w);

Pool5Descriptor pool5_input(const Network& net, const Tensor& input);
Pool5Descriptor pool5_descriptor(const Network& net, const Tensor& rgb);
Pool5Descriptor pool5_descriptor_at(const Network& net, const Tensor& rgb,
                                    std::size_t h, std::size_t w);

struct ImageFeatures {
  FeatureVector phi;
  Pool5Descriptor pool5;
};

// Both representations from one forward pass at the working resolution.
ImageFeatures phi_and_pool5(const Network& net, const Tensor& rgb);

/// 1 - <a,b>/(|a||b|), accumulated in double. Defined as 1 when either
/// vector is zero.
double cosine_distance(std::span<const float> a, std::span<const float> b);

/// Streaming elementwise mean of feature vectors with 64-bit accumulators.
class RunningMean {
 public:
  void add(const FeatureVector& v);
  std::size_t count() const { return count_; }
  FeatureVector mean() const;

 private:
  std::vector<double> sum_;
  FeatureLayout layout_;
  std::size_t count_ = 0;
};

}  // namespace dfi
