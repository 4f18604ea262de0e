#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "microcnn/errors.hpp"
#include "microcnn/tensor.hpp"

namespace microcnn {

/// 8-bit interleaved RGB image, row-major [height, width, 3].
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
};

/// Decodes any PNG (palette, grey, 16-bit, alpha) to 8-bit RGB. Throws
/// DataError for anything that is not a readable PNG.
inline RgbImage read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    const std::string why = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string() + ": " + why);
  }
  img.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.height = img.height;
  out.width = img.width;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string why = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string() + ": " + why);
  }
  if (out.height == 0 || out.width == 0) throw DataError("empty image " + path.string());
  return out;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    const std::string why = img.message;
    png_image_free(&img);
    throw DataError("cannot write PNG " + path.string() + ": " + why);
  }
}

/// Bilinear resize with half-pixel centres: output pixel (y, x) samples the
/// source at ((y + 0.5) * H/H' - 0.5, (x + 0.5) * W/W' - 0.5), clamped to the
/// image. Channels are interpolated independently in double precision and
/// rounded to nearest with halves rounded up (floor(v + 0.5)).
inline RgbImage resize_bilinear(const RgbImage& src, std::size_t out_h, std::size_t out_w) {
  if (src.height == 0 || src.width == 0 || out_h == 0 || out_w == 0)
    throw DimensionError("resize_bilinear needs non-empty source and target sizes");
  RgbImage dst;
  dst.height = out_h;
  dst.width = out_w;
  dst.pixels.resize(out_h * out_w * 3);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t n_out, std::size_t n_in, double scale) {
    std::vector<Tap> t(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
      double pos = (static_cast<double>(i) + 0.5) * scale - 0.5;
      pos = std::clamp(pos, 0.0, static_cast<double>(n_in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, n_in - 1);
      t[i] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(out_h, src.height, sy);
  const auto tx = taps(out_w, src.width, sx);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = src.at(ty[y].lo, tx[x].lo, c) * (1.0 - tx[x].frac) + src.at(ty[y].lo, tx[x].hi, c) * tx[x].frac;
        const double bot = src.at(ty[y].hi, tx[x].lo, c) * (1.0 - tx[x].frac) + src.at(ty[y].hi, tx[x].hi, c) * tx[x].frac;
        const double v = top * (1.0 - ty[y].frac) + bot * ty[y].frac;
        dst.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
  return dst;
}

/// Bytes to [H, W, 3] floats in [0, 1] (value / 255).
inline Tensor normalize(const RgbImage& image) {
  Tensor t(Shape{image.height, image.width, 3});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) t[i] = static_cast<float>(image.pixels[i] / 255.0);
  return t;
}

}  // namespace microcnn
