#pragma once

#include <png.h>

#include <array>
#include <cstdio>
#include <limits>
#include <vector>

#include "gens/common.hpp"
#include "gens/io.hpp"

namespace gens {

// Row-major planar-free RGB image, values in [0, 1]. Pixel centers sit at
// integer coordinates; bilinear sampling clamps to the border.
struct ImageRGB {
  int width = 0, height = 0;
  std::vector<float> data;  // (y * width + x) * 3 + c

  ImageRGB() = default;
  ImageRGB(int w, int h) : width(w), height(h), data(size_t(w) * h * 3, 0.f) {}

  float* px(int x, int y) { return &data[(size_t(y) * width + x) * 3]; }
  const float* px(int x, int y) const { return &data[(size_t(y) * width + x) * 3]; }

  Vec3 at(int x, int y) const {
    const float* p = px(x, y);
    return Vec3(p[0], p[1], p[2]);
  }

  bool inside(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x <= width - 1.0 && y <= height - 1.0;
  }

  Vec3 bilinear(double x, double y) const {
    x = clamp(x, 0.0, double(width - 1));
    y = clamp(y, 0.0, double(height - 1));
    int x0 = std::min(int(x), width - 2), y0 = std::min(int(y), height - 2);
    if (width == 1) x0 = 0;
    if (height == 1) y0 = 0;
    double fx = x - x0, fy = y - y0;
    int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    Vec3 c00 = at(x0, y0), c10 = at(x1, y0), c01 = at(x0, y1), c11 = at(x1, y1);
    return (1 - fy) * ((1 - fx) * c00 + fx * c10) + fy * ((1 - fx) * c01 + fx * c11);
  }
};

// Single-channel float raster with the same conventions.
struct ImageF {
  int width = 0, height = 0;
  std::vector<float> data;

  ImageF() = default;
  ImageF(int w, int h, float fill = 0.f) : width(w), height(h), data(size_t(w) * h, fill) {}

  float& at(int x, int y) { return data[size_t(y) * width + x]; }
  float at(int x, int y) const { return data[size_t(y) * width + x]; }

  double bilinear(double x, double y) const {
    x = clamp(x, 0.0, double(width - 1));
    y = clamp(y, 0.0, double(height - 1));
    int x0 = std::min(int(x), std::max(width - 2, 0));
    int y0 = std::min(int(y), std::max(height - 2, 0));
    double fx = x - x0, fy = y - y0;
    int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    double c00 = at(x0, y0), c10 = at(x1, y0), c01 = at(x0, y1), c11 = at(x1, y1);
    return (1 - fy) * ((1 - fx) * c00 + fx * c10) + fy * ((1 - fx) * c01 + fx * c11);
  }
};

inline uint8_t quantize8(float v) {
  int q = int(std::lround(clamp(v, 0.f, 1.f) * 255.f));
  return uint8_t(clamp(q, 0, 255));
}

inline void save_png(const ImageRGB& img, const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail(Err::IoError, "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    std::fclose(fp);
    png_destroy_write_struct(&png, &info);
    fail(Err::IoError, "png write failed for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(size_t(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const float* p = img.px(x, y);
      row[size_t(x) * 3 + 0] = quantize8(p[0]);
      row[size_t(x) * 3 + 1] = quantize8(p[1]);
      row[size_t(x) * 3 + 2] = quantize8(p[2]);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline ImageRGB load_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) fail(Err::IoError, "cannot read " + path);
  uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8)) {
    std::fclose(fp);
    fail(Err::ParseError, path + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    std::fclose(fp);
    png_destroy_read_struct(&png, &info, nullptr);
    fail(Err::ParseError, path + ": corrupt or truncated PNG");
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_uint_32 w, h;
  int depth, color;
  png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  ImageRGB img{int(w), int(h)};
  std::vector<uint8_t> row(size_t(w) * 3);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x) {
      float* p = img.px(int(x), int(y));
      p[0] = row[size_t(x) * 3 + 0] / 255.f;
      p[1] = row[size_t(x) * 3 + 1] / 255.f;
      p[2] = row[size_t(x) * 3 + 2] / 255.f;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// f32 raster container: 16-byte header (magic "GENSDPT1", u32 width, u32
// height), then row-major little-endian f32 samples.
inline void save_raster(const ImageF& img, const std::string& path) {
  auto out = open_out(path);
  write_magic(out, "GENSDPT1");
  write_pod<uint32_t>(out, uint32_t(img.width));
  write_pod<uint32_t>(out, uint32_t(img.height));
  write_pods(out, img.data.data(), img.data.size());
  if (!out) fail(Err::IoError, "short write to " + path);
}

inline ImageF load_raster(const std::string& path) {
  auto in = open_in(path);
  expect_magic(in, "GENSDPT1", path);
  uint32_t w = read_pod<uint32_t>(in, path);
  uint32_t h = read_pod<uint32_t>(in, path);
  ImageF img{int(w), int(h)};
  read_pods(in, img.data.data(), img.data.size(), path);
  return img;
}

}  // namespace gens
