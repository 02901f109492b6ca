#pragma once

#include <cstddef>
#include <string_view>
#include <utility>
#include <vector>

#include "dfi/reconstruct.hpp"

namespace dfi {

/// Binary mask, 1 = missing. Stored as a 1x1xHxW tensor of 0/1.
class Mask {
 public:
  // Grayscale values >= 128 are missing.
  static Mask from_gray(const Tensor& gray);
  static Mask from_bits(std::size_t h, std::size_t w, std::vector<bool> missing);

  std::size_t h() const { return bits_.h(); }
  std::size_t w() const { return bits_.w(); }
  bool missing(std::size_t y, std::size_t x) const { return bits_.at(0, 0, y, x) != 0.0f; }
  std::size_t missing_count() const;

  // Bilinear resize of the 0/1 field, re-thresholded at 0.5.
  Mask resized(std::size_t h, std::size_t w) const;

  const Tensor& bits() const { return bits_; }

 private:
  explicit Mask(Tensor bits);
  Tensor bits_;
};

inline constexpr float kDefaultMaskFill = 127.0f;

Tensor apply_mask(const Tensor& image, const Mask& mask, float fill = kDefaultMaskFill);

/// Copies pixels outside the mask from `known`, keeps `filled` inside it.
Tensor composite(const Tensor& filled, const Tensor& known, const Mask& mask);

ImagePreparer masked_preparer(const Mask& mask, float fill = kDefaultMaskFill);

/// (unmasked, masked) renditions of index images at the mask's dims.
std::vector<std::pair<Tensor, Tensor>> masked_pairs(const DatasetIndex& index,
                                                    std::span<const std::uint32_t> ids,
                                                    const Mask& mask,
                                                    float fill = kDefaultMaskFill);

enum class InpaintPreset { faces, shoes };

double preset_strength(InpaintPreset preset);
std::string_view to_string(InpaintPreset preset);
InpaintPreset parse_inpaint_preset(std::string_view name);

inline constexpr double kFacesInpaintStrength = 1.6;
inline constexpr double kShoesInpaintStrength = 2.8;

struct InpaintConfig {
  InpaintConfig();

  ReconstructionConfig reconstruction;  // strength_beta defaults to the faces preset
  std::size_t k = kDefaultNeighbors;
  bool composite = true;
  float fill = kDefaultMaskFill;
  int jobs = 1;
};

struct InpaintReport {
  std::vector<std::uint32_t> neighbor_ids;
  bool shortfall = false;
  double alpha = 0.0;
  Shape working_shape;
};

struct InpaintResult {
  Tensor image;
  InpaintReport report;
  LbfgsResult optimization;
};

/// pool5 descriptors of every index image resized to h x w and masked.
std::vector<Pool5Descriptor> masked_descriptors(const Network& net,
                                                const DatasetIndex& index,
                                                const Mask& mask, float fill, int jobs);

/// Fills the missing region of `x_rgb`. The input is brought to working
/// resolution, the mask is resized to match and the query is re-masked.
/// Neighbours are the K nearest masked candidates by pool5 cosine distance.
InpaintResult inpaint(const Tensor& x_rgb, const Mask& mask, const DatasetIndex& index,
                      const InpaintConfig& cfg, const Network& net,
                      const Exclusions& exclusions = {});

}  // namespace dfi
