#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pqr {

// Planar image, channel-major: data[(c*height + y)*width + x], values in
// [0,1]. Planar layout matches the network's input tensors so patches can
// be copied without shuffling.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  static Image zeros(int width, int height, int channels) {
    Image img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.data.assign(static_cast<size_t>(width) * height * channels, 0.0);
    return img;
  }

  double& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Copies a size x size window with top-left corner (x, y).
Image crop(const Image& img, int x, int y, int size);

// Binary PPM (P6) with 8-bit samples; values are rounded from [0,1].
// Writes are atomic (temp file + rename).
void write_ppm(const Image& img, const std::string& path);

// Reads binary P6 (color) or P5 (grayscale, expanded to 3 channels).
// Only maxval 255 is supported.
Image read_ppm(const std::string& path);

}  // namespace pqr
