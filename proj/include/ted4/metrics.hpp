#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "ted4/common.hpp"
#include "ted4/image.hpp"

namespace ted4 {

inline constexpr double kPsnrCap = 100.0;

inline double mse(const Image& a, const Image& b) {
  require(a.same_shape(b), "image shapes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) sum += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return sum / static_cast<double>(a.data.size());
}

/// 10 log10(1 / MSE); identical images report kPsnrCap.
inline double psnr(const Image& a, const Image& b) {
  const double e = mse(a, b);
  if (e == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / e));
}

inline double l1(const Image& a, const Image& b) {
  require(a.same_shape(b), "image shapes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
  return sum / static_cast<double>(a.data.size());
}

namespace detail {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline const std::array<double, kSsimWindow>& ssim_kernel() {
  static const auto g = [] {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double x = i - kSsimWindow / 2;
      k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
      sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
  }();
  return g;
}

/// Valid-mode separable Gaussian filter of one h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& in, int h, int w) {
  const auto& k = ssim_kernel();
  const int oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0), out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int j = 0; j < kSsimWindow; ++j) acc += k[j] * in[static_cast<std::size_t>(r) * w + c + j];
      rows[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * rows[static_cast<std::size_t>(r + i) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  return out;
}

/// Adjoint of filter_valid: spreads an oh x ow map back onto h x w.
inline std::vector<double> filter_adjoint(const std::vector<double>& in, int h, int w) {
  const auto& k = ssim_kernel();
  const int oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0), out(static_cast<std::size_t>(h) * w, 0.0);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      const double v = in[static_cast<std::size_t>(r) * ow + c];
      for (int i = 0; i < kSsimWindow; ++i) rows[static_cast<std::size_t>(r + i) * ow + c] += k[i] * v;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      const double v = rows[static_cast<std::size_t>(r) * ow + c];
      for (int j = 0; j < kSsimWindow; ++j) out[static_cast<std::size_t>(r) * w + c + j] += k[j] * v;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM over all fully contained 11x11 windows and channels. When `grad_a`
/// is given it receives d SSIM / d a.
inline double ssim(const Image& a, const Image& b, Image* grad_a = nullptr) {
  using namespace detail;
  require(a.same_shape(b), "image shapes differ");
  require(a.width >= kSsimWindow && a.height >= kSsimWindow, "image smaller than the 11x11 SSIM window");
  const int h = a.height, w = a.width;
  const int out_h = h - kSsimWindow + 1, out_w = w - kSsimWindow + 1;
  const double count = static_cast<double>(out_h) * out_w * 3;
  const std::size_t n = static_cast<std::size_t>(h) * w, m = static_cast<std::size_t>(out_h) * out_w;
  if (grad_a) *grad_a = Image(w, h);
  double total = 0.0;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (int ch = 0; ch < 3; ++ch) {
    for (std::size_t p = 0; p < n; ++p) {
      x[p] = a.data[3 * p + ch];
      y[p] = b.data[3 * p + ch];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = filter_valid(x, h, w), my = filter_valid(y, h, w);
    const auto sxx = filter_valid(xx, h, w), syy = filter_valid(yy, h, w), sxy = filter_valid(xy, h, w);
    std::vector<double> g1(grad_a ? m : 0), g2(grad_a ? m : 0), g3(grad_a ? m : 0);
    for (std::size_t q = 0; q < m; ++q) {
      const double vx = sxx[q] - mx[q] * mx[q], vy = syy[q] - my[q] * my[q], cxy = sxy[q] - mx[q] * my[q];
      const double n1 = 2 * mx[q] * my[q] + kSsimC1, n2 = 2 * cxy + kSsimC2;
      const double d1 = mx[q] * mx[q] + my[q] * my[q] + kSsimC1, d2 = vx + vy + kSsimC2;
      const double s = (n1 * n2) / (d1 * d2);
      total += s;
      if (!grad_a) continue;
      const double den = d1 * d2;
      const double ds_dmx = (2 * my[q] * n2 - s * 2 * mx[q] * d2) / den;
      const double ds_dvx = -s / d2;
      const double ds_dcxy = 2 * n1 / den;
      // in terms of the raw window moments sum(w x), sum(w x^2), sum(w x y)
      g1[q] = (ds_dmx + ds_dvx * (-2 * mx[q]) + ds_dcxy * (-my[q])) / count;
      g2[q] = ds_dvx / count;
      g3[q] = ds_dcxy / count;
    }
    if (!grad_a) continue;
    const auto b1 = filter_adjoint(g1, h, w), b2 = filter_adjoint(g2, h, w), b3 = filter_adjoint(g3, h, w);
    for (std::size_t p = 0; p < n; ++p) grad_a->data[3 * p + ch] = b1[p] + 2 * x[p] * b2[p] + y[p] * b3[p];
  }
  return total / count;
}

}  // namespace ted4
