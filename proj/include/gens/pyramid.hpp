#pragma once

#include <vector>

#include "gens/common.hpp"
#include "gens/image.hpp"

namespace gens {

constexpr int kFeatChannels = 4;   // luma, d/dx luma, d/dy luma, laplacian
constexpr int kPatchLevels = 3;    // finest pyramid levels used for patches

// One pyramid level: kFeatChannels interleaved float features.
struct FeatureMap {
  int width = 0, height = 0;
  std::vector<float> data;  // (y * width + x) * kFeatChannels + c

  FeatureMap() = default;
  FeatureMap(int w, int h) : width(w), height(h), data(size_t(w) * h * kFeatChannels, 0.f) {}

  const float* px(int x, int y) const { return &data[(size_t(y) * width + x) * kFeatChannels]; }
  float* px(int x, int y) { return &data[(size_t(y) * width + x) * kFeatChannels]; }

  // Bilinear fetch of all channels, border-clamped. Optionally returns the
  // spatial derivative of each channel w.r.t. the (unclamped) coordinates.
  void fetch(double x, double y, double* out, double* dx_out = nullptr,
             double* dy_out = nullptr) const {
    double xc = clamp(x, 0.0, double(width - 1));
    double yc = clamp(y, 0.0, double(height - 1));
    bool clx = xc != x, cly = yc != y;
    int x0 = std::min(int(xc), std::max(width - 2, 0));
    int y0 = std::min(int(yc), std::max(height - 2, 0));
    double fx = xc - x0, fy = yc - y0;
    int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    const float* p00 = px(x0, y0);
    const float* p10 = px(x1, y0);
    const float* p01 = px(x0, y1);
    const float* p11 = px(x1, y1);
    for (int c = 0; c < kFeatChannels; ++c) {
      double a = (1 - fx) * p00[c] + fx * p10[c];
      double b = (1 - fx) * p01[c] + fx * p11[c];
      out[c] = (1 - fy) * a + fy * b;
      if (dx_out) dx_out[c] = clx ? 0.0 : (1 - fy) * (p10[c] - p00[c]) + fy * (p11[c] - p01[c]);
      if (dy_out) dy_out[c] = cly ? 0.0 : ((1 - fx) * p01[c] + fx * p11[c]) -
                                              ((1 - fx) * p00[c] + fx * p10[c]);
    }
  }
};

struct FeaturePyramid {
  std::vector<FeatureMap> levels;  // fine -> coarse
};

namespace detail {

inline ImageF luma_of(const ImageRGB& img) {
  ImageF out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const float* p = img.px(x, y);
      out.at(x, y) = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
    }
  return out;
}

inline ImageF gauss_decimate(const ImageF& in) {
  static const float k[5] = {1.f / 16, 4.f / 16, 6.f / 16, 4.f / 16, 1.f / 16};
  ImageF tmp(in.width, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      float acc = 0.f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * in.at(clamp(x + i, 0, in.width - 1), y);
      tmp.at(x, y) = acc;
    }
  ImageF blur(in.width, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      float acc = 0.f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp.at(x, clamp(y + i, 0, in.height - 1));
      blur.at(x, y) = acc;
    }
  ImageF out((in.width + 1) / 2, (in.height + 1) / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = blur.at(2 * x, 2 * y);
  return out;
}

inline FeatureMap descriptors_of(const ImageF& l) {
  FeatureMap fm(l.width, l.height);
  auto v = [&](int x, int y) { return l.at(clamp(x, 0, l.width - 1), clamp(y, 0, l.height - 1)); };
  for (int y = 0; y < l.height; ++y)
    for (int x = 0; x < l.width; ++x) {
      float* f = fm.px(x, y);
      f[0] = l.at(x, y);
      f[1] = 0.5f * (v(x + 1, y) - v(x - 1, y));
      f[2] = 0.5f * (v(x, y + 1) - v(x, y - 1));
      f[3] = v(x + 1, y) + v(x - 1, y) + v(x, y + 1) + v(x, y - 1) - 4.f * l.at(x, y);
    }
  return fm;
}

}  // namespace detail

// Fixed multi-scale descriptor pyramid: per level, [luma, d/dx, d/dy,
// laplacian] of the progressively blurred and 2x-decimated luminance.
inline FeaturePyramid build_pyramid(const ImageRGB& img, int n_levels) {
  require(n_levels >= 1, Err::ImageTooSmall, "pyramid needs at least one level");
  require(std::min(img.width, img.height) >= (1 << (n_levels - 1)), Err::ImageTooSmall,
          "image min side must be at least 2^(levels-1)");
  FeaturePyramid pyr;
  ImageF luma = detail::luma_of(img);
  for (int j = 0; j < n_levels; ++j) {
    pyr.levels.push_back(detail::descriptors_of(luma));
    if (j + 1 < n_levels) luma = detail::gauss_decimate(luma);
  }
  return pyr;
}

// Patch of concatenated top-3-scale features on a k x k pixel lattice.
// Channel-major storage: value(l, i) = values[l * k * k + i].
struct FeaturePatch {
  int k = 0;
  int ch2 = kPatchLevels * kFeatChannels;
  std::vector<double> values;  // ch2 * k * k
  std::vector<uint8_t> mask;   // k * k, 1 = valid

  double& value(int channel, int i) { return values[size_t(channel) * k * k + i]; }
  double value(int channel, int i) const { return values[size_t(channel) * k * k + i]; }
};

// Samples the patch at explicit level-0 pixel positions (k*k of them).
// Level j is read at position / 2^j; entries outside the level-0 image
// bounds (or flagged invalid by the caller) are masked out.
inline FeaturePatch sample_patch_at(const FeaturePyramid& pyr,
                                    const std::vector<Vec2>& positions,
                                    const std::vector<uint8_t>* valid, int k) {
  require(pyr.levels.size() >= kPatchLevels, Err::ImageTooSmall,
          "pyramid has fewer levels than patches need");
  FeaturePatch patch;
  patch.k = k;
  patch.values.assign(size_t(patch.ch2) * k * k, 0.0);
  patch.mask.assign(size_t(k) * k, 0);
  const FeatureMap& l0 = pyr.levels[0];
  double feat[kFeatChannels];
  for (int i = 0; i < k * k; ++i) {
    if (valid && !(*valid)[i]) continue;
    const Vec2& q = positions[i];
    if (!(q.x() >= 0.0 && q.y() >= 0.0 && q.x() <= l0.width - 1.0 && q.y() <= l0.height - 1.0))
      continue;
    patch.mask[i] = 1;
    for (int j = 0; j < kPatchLevels; ++j) {
      double scale = 1.0 / double(1 << j);
      pyr.levels[j].fetch(q.x() * scale, q.y() * scale, feat);
      for (int c = 0; c < kFeatChannels; ++c)
        patch.value(j * kFeatChannels + c, i) = feat[c];
    }
  }
  return patch;
}

inline FeaturePatch sample_patch(const FeaturePyramid& pyr, const Vec2& center, int k) {
  require(k >= 1 && k % 2 == 1, Err::ParseError, "patch size must be odd");
  std::vector<Vec2> pos(size_t(k) * k);
  int r = k / 2;
  for (int dy = -r, i = 0; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx, ++i) pos[i] = center + Vec2(dx, dy);
  return sample_patch_at(pyr, pos, nullptr, k);
}

}  // namespace gens
