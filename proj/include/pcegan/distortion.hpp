#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "pcegan/patch.hpp"
#include "pcegan/pointcloud.hpp"

namespace pcegan {

// Synthetic attribute-coding distortion: a stand-in for codec output so
// training and evaluation pairs exist without an external codec. It mimics
// exactly two codec effects, a transform-like low-pass and uniform
// quantization, and is a proxy everywhere it is reported.

struct DistortionProfile {
  int qp = 40;
  int smoothing_k = 8;   // 0 disables the low-pass
  uint64_t seed = 0;     // provenance only; the simulator is deterministic

  // Familiar video-coding step ladder. Steps below 1 are clamped to 1,
  // which is lossless for 8-bit integer sources.
  double step() const {
    if (qp < 1) throw std::invalid_argument("distortion: qp >= 1");
    return std::max(1.0, std::pow(2.0, (qp - 4) / 6.0));
  }
};

// Per channel: blend each value half-and-half with its k-neighborhood mean,
// then quantize/dequantize with the profile step. Geometry is untouched.
inline PointCloud distort(const PointCloud& pc, const DistortionProfile& profile) {
  pc.validate();
  const double step = profile.step();
  PointCloud out = pc;
  const size_t N = pc.size();
  if (profile.smoothing_k > 0) {
    int k = std::min<int>(profile.smoothing_k, static_cast<int>(N));
    std::vector<int> nbr = knn(pc.geometry, pc.geometry, k);
    for (size_t i = 0; i < N; ++i) {
      Vec3 mean{0, 0, 0};
      for (int j = 0; j < k; ++j) {
        const Vec3& a = pc.attributes[nbr[i * k + j]];
        for (int c = 0; c < 3; ++c) mean[c] += a[c];
      }
      for (int c = 0; c < 3; ++c)
        out.attributes[i][c] = 0.5 * pc.attributes[i][c] + 0.5 * mean[c] / k;
    }
  }
  for (auto& a : out.attributes)
    for (int c = 0; c < 3; ++c)
      a[c] = clamp255(std::round(a[c] / step) * step);
  return out;
}

// Zero-order empirical entropy of the per-channel quantization indices,
// summed over channels: a monotone bits-per-input-point proxy.
inline double bitrate_proxy(const PointCloud& pc_distorted,
                            const DistortionProfile& profile) {
  pc_distorted.validate();
  const double step = profile.step();
  const double n = static_cast<double>(pc_distorted.size());
  double bits = 0;
  for (int c = 0; c < 3; ++c) {
    std::map<long, size_t> hist;
    for (const auto& a : pc_distorted.attributes)
      ++hist[std::lround(a[c] / step)];
    double h = 0;
    for (const auto& [sym, count] : hist) {
      double p = count / n;
      h -= p * std::log2(p);
    }
    bits += h;
  }
  return bits;
}

}  // namespace pcegan
