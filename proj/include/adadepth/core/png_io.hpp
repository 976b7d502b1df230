#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "adadepth/core/error.hpp"

namespace adadepth::png {

/// Raw 8- or 16-bit PNG pixel buffer; 16-bit samples are stored host-order.
struct Raster {
  int width = 0, height = 0, channels = 0, bit_depth = 8;
  std::vector<std::uint16_t> samples;  // row-major, interleaved channels
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

inline bool write_impl(std::FILE* fp, const Raster& r, std::vector<png_bytep>& rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_compression_level(png, 6);
  const int color = r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, r.width, r.height, r.bit_depth, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

inline bool read_impl(std::FILE* fp, Raster& r, std::vector<std::uint8_t>& bytes,
                      std::vector<png_bytep>& rows) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  r.width = int(png_get_image_width(png, info));
  r.height = int(png_get_image_height(png, info));
  r.bit_depth = png_get_bit_depth(png, info);
  r.channels = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  if (r.bit_depth != 8 && r.bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  const std::size_t bps = r.bit_depth / 8;
  const std::size_t stride = std::size_t(r.width) * r.channels * bps;
  bytes.assign(stride * r.height, 0);
  rows.resize(r.height);
  for (int y = 0; y < r.height; ++y) rows[y] = bytes.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

}  // namespace detail

inline void write(const std::string& path, const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw IoError("png: unsupported channel count");
  if (r.samples.size() != std::size_t(r.width) * r.height * r.channels)
    throw IoError("png: sample buffer does not match raster size");
  const std::size_t bps = r.bit_depth / 8;
  const std::size_t stride = std::size_t(r.width) * r.channels * bps;
  std::vector<std::uint8_t> bytes(stride * r.height);
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    if (bps == 1) {
      bytes[i] = std::uint8_t(r.samples[i]);
    } else {
      bytes[2 * i] = std::uint8_t(r.samples[i] >> 8);  // PNG is big-endian
      bytes[2 * i + 1] = std::uint8_t(r.samples[i] & 0xff);
    }
  }
  std::vector<png_bytep> rows(r.height);
  for (int y = 0; y < r.height; ++y) rows[y] = bytes.data() + stride * y;
  detail::File fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open '" + path + "' for writing");
  if (!detail::write_impl(fp.get(), r, rows)) throw IoError("png encode failed: " + path);
  if (std::fflush(fp.get()) != 0) throw IoError("write failed: " + path);
}

inline Raster read(const std::string& path) {
  detail::File fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open '" + path + "'");
  Raster r;
  std::vector<std::uint8_t> bytes;
  std::vector<png_bytep> rows;
  if (!detail::read_impl(fp.get(), r, bytes, rows)) throw IoError("png decode failed: " + path);
  const std::size_t n = std::size_t(r.width) * r.height * r.channels;
  r.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    r.samples[i] = r.bit_depth == 8 ? bytes[i] : std::uint16_t((bytes[2 * i] << 8) | bytes[2 * i + 1]);
  return r;
}

}  // namespace adadepth::png
