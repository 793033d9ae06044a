#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace pcegan {

using Vec3 = std::array<double, 3>;

enum class ColorSpace { RGB, YCbCr };

// N points, each with 3 geometry coordinates and 3 color values in [0,255].
// Attributes are kept as reals; quantization to 8 bits happens at save time.
struct PointCloud {
  std::vector<Vec3> geometry;
  std::vector<Vec3> attributes;
  ColorSpace color_space = ColorSpace::RGB;

  size_t size() const { return geometry.size(); }

  void validate() const {
    if (geometry.empty()) throw std::invalid_argument("empty cloud");
    if (geometry.size() != attributes.size())
      throw std::invalid_argument("geometry/attribute count mismatch");
  }
};

inline double clamp255(double x) { return std::clamp(x, 0.0, 255.0); }

// Full-range ITU-R BT.709 matrix, chroma offset +128.
//   Y  =  0.2126 R + 0.7152 G + 0.0722 B
//   Cb = (B - Y) / 1.8556 + 128
//   Cr = (R - Y) / 1.5748 + 128
// The inverse below is the exact algebraic inverse of this matrix.
inline Vec3 rgb_to_ycbcr_pixel(const Vec3& rgb) {
  double y = 0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2];
  double cb = (rgb[2] - y) / 1.8556 + 128.0;
  double cr = (rgb[0] - y) / 1.5748 + 128.0;
  return {clamp255(y), clamp255(cb), clamp255(cr)};
}

inline Vec3 ycbcr_to_rgb_pixel(const Vec3& ycc) {
  double y = ycc[0], cb = ycc[1] - 128.0, cr = ycc[2] - 128.0;
  double r = y + 1.5748 * cr;
  double b = y + 1.8556 * cb;
  double g = (y - 0.2126 * r - 0.0722 * b) / 0.7152;
  return {clamp255(r), clamp255(g), clamp255(b)};
}

inline PointCloud rgb_to_ycbcr(const PointCloud& pc) {
  pc.validate();
  if (pc.color_space != ColorSpace::RGB)
    throw std::logic_error("rgb_to_ycbcr: source is not RGB");
  PointCloud out = pc;
  out.color_space = ColorSpace::YCbCr;
  for (auto& a : out.attributes) a = rgb_to_ycbcr_pixel(a);
  return out;
}

inline PointCloud ycbcr_to_rgb(const PointCloud& pc) {
  pc.validate();
  if (pc.color_space != ColorSpace::YCbCr)
    throw std::logic_error("ycbcr_to_rgb: source is not YCbCr");
  PointCloud out = pc;
  out.color_space = ColorSpace::RGB;
  for (auto& a : out.attributes) a = ycbcr_to_rgb_pixel(a);
  return out;
}

}  // namespace pcegan
