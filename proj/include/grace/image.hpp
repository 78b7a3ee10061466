#pragma once

// 8-bit raster images, PNG encode/decode (libpng) and normalization into
// network input.

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "grace/types.hpp"

namespace grace {

/// Interleaved 8-bit raster, `channels` samples per pixel (1 or 3).
struct Raster {
  std::vector<std::uint8_t> data;
  Index height = 0;
  Index width = 0;
  int channels = 3;

  Raster() = default;
  Raster(Index h, Index w, int c, std::uint8_t fill = 0)
      : data(static_cast<std::size_t>(h * w * c), fill), height(h), width(w), channels(c) {}

  std::uint8_t& at(Index y, Index x, int c = 0) {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(Index y, Index x, int c = 0) const {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  bool operator==(const Raster&) const = default;
};

/// Per-channel zero-mean, unit-variance normalization of an RGB raster.
inline ImageInput normalize_image(const Raster& rgb) {
  if (rgb.channels != 3) throw std::invalid_argument("normalize_image: expected 3 channels");
  ImageInput img;
  img.height = rgb.height;
  img.width = rgb.width;
  const Index n = rgb.height * rgb.width;
  img.pixels.resize(3, n);
  for (Index p = 0; p < n; ++p)
    for (int c = 0; c < 3; ++c) img.pixels(c, p) = rgb.data[static_cast<std::size_t>(p * 3 + c)] / 255.0;
  for (int c = 0; c < 3; ++c) {
    const double mean = img.pixels.row(c).mean();
    const double var = (img.pixels.row(c).array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + 1e-8);
    img.pixels.row(c) = ((img.pixels.row(c).array() - mean) * inv).matrix();
  }
  return img;
}

inline Raster mask_to_raster(const PartMask& m) {
  Raster r(m.height, m.width, 1);
  r.data = m.mask;
  return r;
}

inline PartMask raster_to_mask(const Raster& r, int parts) {
  if (r.channels != 1) throw std::invalid_argument("part mask must be single channel");
  PartMask m;
  m.height = r.height;
  m.width = r.width;
  m.parts = parts;
  m.mask = r.data;
  return m;
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline void write_png(const std::string& path, const Raster& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: 1 or 3 channels supported");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encode failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.data.data() + y * img.width * img.channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Raster read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  Raster out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("PNG decode failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.data.resize(static_cast<std::size_t>(out.width * out.height * out.channels));
  for (Index y = 0; y < out.height; ++y) png_read_row(png, out.data.data() + y * out.width * out.channels, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace grace
