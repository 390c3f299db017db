#pragma once

#include <filesystem>
#include <vector>

namespace affectlab {

// HWC image with double pixels; decoded files start in the 0..255 domain.
struct Image {
  std::size_t height = 0, width = 0, channels = 3;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 3, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

// 8-bit RGB PNG/JPEG. Throws IOError naming the path.
Image load_image(const std::filesystem::path& path);
// Rounds and saturates to 8 bits; format from the extension.
void save_image(const std::filesystem::path& path, const Image& image);
// Bilinear resize (area averaging when shrinking).
Image resize_image(const Image& image, std::size_t height, std::size_t width);

}  // namespace affectlab
