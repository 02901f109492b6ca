#include "dfi/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace dfi {
namespace {

Tensor read_png(const std::filesystem::path& path, bool color) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    const std::string message = image.message;
    png_image_free(&image);
    throw FormatError("cannot decode " + path.string() + ": " + message);
  }
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw FormatError("cannot decode " + path.string() + ": " + message);
  }
  const std::size_t channels = color ? 3 : 1;
  const std::size_t h = image.height;
  const std::size_t w = image.width;
  Tensor out(Shape{1, channels, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        out.at(0, c, y, x) = buffer[(y * w + x) * channels + c];
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& t, bool color) {
  const std::size_t channels = color ? 3 : 1;
  if (t.n() != 1 || t.c() != channels || t.h() == 0 || t.w() == 0) {
    throw ShapeError("write_png: expected 1x" + std::to_string(channels) +
                     "xHxW, got " + to_string(t.shape()));
  }
  std::vector<png_byte> buffer(t.size());
  for (std::size_t y = 0; y < t.h(); ++y) {
    for (std::size_t x = 0; x < t.w(); ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const float v = std::clamp(std::nearbyint(t.at(0, c, y, x)), 0.0f, 255.0f);
        buffer[(y * t.w() + x) * channels + c] = static_cast<png_byte>(v);
      }
    }
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(t.w());
  image.height = static_cast<png_uint_32>(t.h());
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0,
                               nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw Error("cannot write " + path.string() + ": " + message);
  }
}

}  // namespace

Tensor read_png_rgb(const std::filesystem::path& path) { return read_png(path, true); }
Tensor read_png_gray(const std::filesystem::path& path) { return read_png(path, false); }
void write_png_rgb(const std::filesystem::path& path, const Tensor& rgb) {
  write_png(path, rgb, true);
}
void write_png_gray(const std::filesystem::path& path, const Tensor& gray) {
  write_png(path, gray, false);
}

}  // namespace dfi
