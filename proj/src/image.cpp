#include "pqr/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pqr/error.hpp"

namespace pqr {

Image crop(const Image& img, int x, int y, int size) {
  if (size < 1 || x < 0 || y < 0 || x + size > img.width || y + size > img.height)
    fail(Errc::invalid_parameter, "crop window outside the image");
  Image out = Image::zeros(size, size, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int row = 0; row < size; ++row) {
      const double* src = &img.data[(static_cast<size_t>(c) * img.height + y + row) * img.width + x];
      double* dst = &out.data[(static_cast<size_t>(c) * size + row) * size];
      std::copy(src, src + size, dst);
    }
  return out;
}

void write_ppm(const Image& img, const std::string& path) {
  if (img.channels != 3) fail(Errc::invalid_parameter, "PPM writer expects 3 channels");
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(Errc::io_error, "cannot open '" + tmp + "' for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) {
          double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
          row[static_cast<size_t>(x) * 3 + c] =
              static_cast<unsigned char>(std::lround(v * 255.0));
        }
      out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) fail(Errc::io_error, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(Errc::io_error, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

namespace {

// Skips whitespace and '#' comment lines in a PNM header.
int next_header_int(std::istream& in, const std::string& path) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(ch)) {
      in.get();
      continue;
    }
    break;
  }
  int value = 0;
  if (!(in >> value)) fail(Errc::io_error, "truncated PNM header in '" + path + "'");
  return value;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open '" + path + "'");
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    fail(Errc::unsupported_format, "'" + path + "' is not a binary P5/P6 PNM file");
  const int file_channels = kind == '6' ? 3 : 1;

  int width = next_header_int(in, path);
  int height = next_header_int(in, path);
  int maxval = next_header_int(in, path);
  if (width < 1 || height < 1) fail(Errc::unsupported_format, "bad PNM dimensions in '" + path + "'");
  if (maxval != 255) fail(Errc::unsupported_format, "only maxval 255 PNM is supported ('" + path + "')");
  in.get();  // single whitespace after maxval

  std::vector<unsigned char> raw(static_cast<size_t>(width) * height * file_channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    fail(Errc::io_error, "truncated pixel data in '" + path + "'");

  Image img = Image::zeros(width, height, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const size_t base = (static_cast<size_t>(y) * width + x) * file_channels;
      for (int c = 0; c < 3; ++c) {
        unsigned char byte = raw[base + (file_channels == 3 ? c : 0)];
        img.at(c, y, x) = static_cast<double>(byte) / 255.0;
      }
    }
  return img;
}

}  // namespace pqr
