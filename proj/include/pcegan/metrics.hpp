#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace pcegan {

// Fidelity and Bjontegaard rate-distortion metrics.

inline constexpr double kPsnrInf = std::numeric_limits<double>::infinity();
inline constexpr double kPsnrCap = 99.99;  // stand-in for inf inside BD fits

inline double psnr(const std::vector<double>& a, const std::vector<double>& b,
                   double peak = 255.0) {
  if (a.size() != b.size()) throw std::invalid_argument("psnr: length mismatch");
  if (a.empty()) throw std::invalid_argument("psnr: empty input");
  double mse = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0) return kPsnrInf;
  return 10.0 * std::log10(peak * peak / mse);
}

// 6:1:1 luma-weighted combination (MPEG convention).
inline double ycbcr_psnr(double psnr_y, double psnr_cb, double psnr_cr) {
  return (6.0 * psnr_y + psnr_cb + psnr_cr) / 8.0;
}

// test - anchor at one bitrate; positive means the test is better.
inline double delta_psnr(double anchor_psnr, double test_psnr) {
  return test_psnr - anchor_psnr;
}

struct RDPoint {
  double bitrate = 0;  // bits per input point
  double psnr = 0;     // dB
};

struct RDCurve {
  std::vector<RDPoint> points;

  void validate() const {
    if (points.size() < 4) throw std::invalid_argument("rd curve: need >= 4 points");
    for (size_t i = 0; i < points.size(); ++i) {
      if (!(points[i].bitrate > 0) || !std::isfinite(points[i].bitrate))
        throw std::invalid_argument("rd curve: bitrates must be positive finite");
      if (std::isnan(points[i].psnr))
        throw std::invalid_argument("rd curve: NaN psnr");
      if (i && points[i].bitrate <= points[i - 1].bitrate)
        throw std::invalid_argument("rd curve: bitrates must be strictly increasing");
    }
  }

  bool monotonic_psnr() const {
    for (size_t i = 1; i < points.size(); ++i)
      if (points[i].psnr <= points[i - 1].psnr) return false;
    return true;
  }
};

struct BDResult {
  double bd_rate_percent = 0;
  double bd_psnr_db = 0;
  double overlap_lo = 0, overlap_hi = 0;  // of the BD-PSNR log-rate interval
  bool non_monotonic_warning = false;
};

namespace bd_detail {

// Least-squares cubic fit of y over (x - shift); returns coeffs c0..c3.
inline std::array<double, 4> cubic_fit(const std::vector<double>& x,
                                       const std::vector<double>& y,
                                       double shift) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd A(n, 4);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) {
    double t = x[i] - shift;
    A(i, 0) = 1;
    A(i, 1) = t;
    A(i, 2) = t * t;
    A(i, 3) = t * t * t;
    b(i) = y[i];
  }
  Eigen::Vector4d c = A.colPivHouseholderQr().solve(b);
  return {c(0), c(1), c(2), c(3)};
}

// Closed-form integral of the cubic over [lo, hi] in shifted coordinates.
inline double integrate(const std::array<double, 4>& c, double lo, double hi) {
  auto F = [&](double t) {
    return c[0] * t + c[1] * t * t / 2 + c[2] * t * t * t / 3 +
           c[3] * t * t * t * t / 4;
  };
  return F(hi) - F(lo);
}

// Mean of (fit_test - fit_anchor) over the overlap of the two x ranges.
inline double mean_fit_difference(const std::vector<double>& xa,
                                  const std::vector<double>& ya,
                                  const std::vector<double>& xt,
                                  const std::vector<double>& yt, double& lo,
                                  double& hi) {
  lo = std::max(*std::min_element(xa.begin(), xa.end()),
                *std::min_element(xt.begin(), xt.end()));
  hi = std::min(*std::max_element(xa.begin(), xa.end()),
                *std::max_element(xt.begin(), xt.end()));
  if (!(hi > lo)) throw std::invalid_argument("bd metrics: no overlap");
  double shift = (lo + hi) / 2;  // conditioning only; cancels in the result
  auto ca = cubic_fit(xa, ya, shift);
  auto ct = cubic_fit(xt, yt, shift);
  std::array<double, 4> d;
  for (int i = 0; i < 4; ++i) d[i] = ct[i] - ca[i];
  return integrate(d, lo - shift, hi - shift) / (hi - lo);
}

}  // namespace bd_detail

inline BDResult bd_metrics(const RDCurve& anchor, const RDCurve& test) {
  anchor.validate();
  test.validate();
  BDResult result;
  result.non_monotonic_warning = !anchor.monotonic_psnr() || !test.monotonic_psnr();

  auto capped = [](double p) { return std::isfinite(p) ? p : kPsnrCap; };
  std::vector<double> la, pa, lt, pt;
  for (const auto& q : anchor.points) {
    la.push_back(std::log(q.bitrate));
    pa.push_back(capped(q.psnr));
  }
  for (const auto& q : test.points) {
    lt.push_back(std::log(q.bitrate));
    pt.push_back(capped(q.psnr));
  }

  // BD-PSNR: psnr as a cubic in log-rate, averaged over the log-rate overlap.
  result.bd_psnr_db = bd_detail::mean_fit_difference(la, pa, lt, pt,
                                                     result.overlap_lo,
                                                     result.overlap_hi);
  // BD-rate: log-rate as a cubic in psnr, averaged over the psnr overlap.
  double plo, phi;
  double dlog = bd_detail::mean_fit_difference(pa, la, pt, lt, plo, phi);
  result.bd_rate_percent = (std::exp(dlog) - 1.0) * 100.0;
  return result;
}

}  // namespace pcegan
