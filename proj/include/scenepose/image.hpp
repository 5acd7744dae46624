#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "scenepose/pose.hpp"
#include "scenepose/tensor.hpp"

namespace scenepose {

/// Interleaved RGB image, values in [0,1]. Pixel (x,y) has its center at
/// (x+0.5, y+0.5) in corner coordinates; y grows downward.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // size width*height*3

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<size_t>(w) * static_cast<size_t>(h) * 3, fill) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("image: non-positive size");
  }

  float& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)) * 3 +
                static_cast<size_t>(c)];
  }
  float at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)) * 3 +
                static_cast<size_t>(c)];
  }

  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

  void set_pixel(int x, int y, const std::array<float, 3>& rgb) {
    if (!in_bounds(x, y)) return;
    for (int c = 0; c < 3; ++c) at(x, y, c) = rgb[static_cast<size_t>(c)];
  }

  void fill_rect(int x0, int y0, int x1, int y1, const std::array<float, 3>& rgb) {
    for (int y = std::max(0, y0); y < std::min(height, y1); ++y)
      for (int x = std::max(0, x0); x < std::min(width, x1); ++x)
        set_pixel(x, y, rgb);
  }

  bool operator==(const Image&) const = default;
};

/// Bilinear sample at corner coordinates (sx, sy). Points outside the image
/// rectangle return exact zero; inside, taps are clamped at the border.
inline std::array<float, 3> sample_bilinear(const Image& img, double sx, double sy) {
  if (sx < 0.0 || sx > img.width || sy < 0.0 || sy > img.height) return {0.0f, 0.0f, 0.0f};
  const double u = sx - 0.5, v = sy - 0.5;
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const double fx = u - x0, fy = v - y0;
  const auto cx = [&](int x) { return std::clamp(x, 0, img.width - 1); };
  const auto cy = [&](int y) { return std::clamp(y, 0, img.height - 1); };
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const double top = (1.0 - fx) * img.at(cx(x0), cy(y0), c) + fx * img.at(cx(x0 + 1), cy(y0), c);
    const double bot =
        (1.0 - fx) * img.at(cx(x0), cy(y0 + 1), c) + fx * img.at(cx(x0 + 1), cy(y0 + 1), c);
    out[static_cast<size_t>(c)] = static_cast<float>((1.0 - fy) * top + fy * bot);
  }
  return out;
}

/// Resamples the source box (pixel corner coordinates, may extend beyond the
/// image) to an out_w×out_h image. Output pixel (ox,oy) samples the source at
/// the center of its corresponding subregion.
inline Image sample_region(const Image& src, const BBox& box, int out_w, int out_h) {
  if (!box.valid() || box.width() <= 0.0 || box.height() <= 0.0)
    throw std::invalid_argument("sample_region: invalid box");
  Image out(out_w, out_h);
  const double sx_step = box.width() / out_w;
  const double sy_step = box.height() / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    const double sy = box.y_min + (oy + 0.5) * sy_step;
    for (int ox = 0; ox < out_w; ++ox) {
      const double sx = box.x_min + (ox + 0.5) * sx_step;
      out.set_pixel(ox, oy, sample_bilinear(src, sx, sy));
    }
  }
  return out;
}

/// Planar {3,H,W} tensor in [0,1] for model input.
inline Tensor image_to_tensor(const Image& img) {
  Tensor t({3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t(c, y, x) = img.at(x, y, c);
  return t;
}

inline void draw_disc(Image& img, double cx, double cy, double radius,
                      const std::array<float, 3>& rgb) {
  const int x0 = static_cast<int>(std::floor(cx - radius)), x1 = static_cast<int>(std::ceil(cx + radius));
  const int y0 = static_cast<int>(std::floor(cy - radius)), y1 = static_cast<int>(std::ceil(cy + radius));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= radius * radius) img.set_pixel(x, y, rgb);
    }
}

inline void draw_line(Image& img, double x0, double y0, double x1, double y1,
                      const std::array<float, 3>& rgb, double thickness = 1.0) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    draw_disc(img, x0 + t * (x1 - x0), y0 + t * (y1 - y0), 0.5 * thickness, rgb);
  }
}

// 3x5 bitmap glyphs for "0123456789." used to annotate scores on renders.
namespace detail {
inline const std::array<uint16_t, 11>& digit_glyphs() {
  // Each glyph: 15 bits, row-major 3 wide x 5 tall, MSB first.
  static const std::array<uint16_t, 11> glyphs = {
      0b111101101101111,  // 0
      0b010110010010111,  // 1
      0b111001111100111,  // 2
      0b111001111001111,  // 3
      0b101101111001001,  // 4
      0b111100111001111,  // 5
      0b111100111101111,  // 6
      0b111001001001001,  // 7
      0b111101111101111,  // 8
      0b111101111001111,  // 9
      0b000000000000010,  // .
  };
  return glyphs;
}
}  // namespace detail

/// Draws text made of digits and dots at (x,y), one pixel per glyph bit.
inline void draw_score_text(Image& img, int x, int y, const std::string& text,
                            const std::array<float, 3>& rgb) {
  int cursor = x;
  for (char ch : text) {
    int gi = -1;
    if (ch >= '0' && ch <= '9') gi = ch - '0';
    else if (ch == '.') gi = 10;
    if (gi >= 0) {
      const uint16_t bits = detail::digit_glyphs()[static_cast<size_t>(gi)];
      for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 3; ++c)
          if (bits & (1u << (14 - (r * 3 + c)))) img.set_pixel(cursor + c, y + r, rgb);
    }
    cursor += 4;
  }
}

}  // namespace scenepose
