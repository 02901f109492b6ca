#pragma once

#include <filesystem>

#include "dfi/tensor.hpp"

namespace dfi {

// 8-bit PNG <-> float tensors with values in [0, 255]. Colour images are
// 1x3xHxW (RGB); grayscale images are 1x1xHxW. Writers round to nearest and
// clamp.
Tensor read_png_rgb(const std::filesystem::path& path);
Tensor read_png_gray(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const Tensor& rgb);
void write_png_gray(const std::filesystem::path& path, const Tensor& gray);

}  // namespace dfi
