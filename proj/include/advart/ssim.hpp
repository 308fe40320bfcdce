#pragma once

#include <cmath>
#include <vector>

#include "advart/error.hpp"
#include "advart/image.hpp"

namespace advart {

namespace detail {

inline const std::vector<double>& ssim_kernel() {
  // 11-tap Gaussian, sigma 1.5, normalized
  static const std::vector<double> k = [] {
    std::vector<double> g(11);
    double s = 0.0;
    for (int i = 0; i < 11; ++i) {
      double d = i - 5.0;
      g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      s += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= s;
    return g;
  }();
  return k;
}

// separable valid convolution of an h*w plane with the 11-tap kernel
inline std::vector<double> ssim_blur(const std::vector<double>& p, int h, int w) {
  const auto& k = ssim_kernel();
  const int wh = h, ww = w - 10;
  std::vector<double> tmp(static_cast<std::size_t>(wh) * ww);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ww; ++x) {
      double s = 0.0;
      for (int t = 0; t < 11; ++t)
        s += k[static_cast<std::size_t>(t)] * p[static_cast<std::size_t>(y) * w + x + t];
      tmp[static_cast<std::size_t>(y) * ww + x] = s;
    }
  const int oh = h - 10;
  std::vector<double> out(static_cast<std::size_t>(oh) * ww);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ww; ++x) {
      double s = 0.0;
      for (int t = 0; t < 11; ++t)
        s += k[static_cast<std::size_t>(t)] * tmp[static_cast<std::size_t>(y + t) * ww + x];
      out[static_cast<std::size_t>(y) * ww + x] = s;
    }
  return out;
}

}  // namespace detail

// Structural similarity on [0,1] images: mean local SSIM over 11x11 Gaussian
// windows (sigma 1.5), C1=(0.01)^2, C2=(0.03)^2, computed per channel on the
// valid interior and averaged over the three channels.
inline double ssim(const ImageRGB& a, const ImageRGB& b) {
  require(a.height == b.height && a.width == b.width,
          "ssim: image sizes differ (" + std::to_string(a.height) + "x" +
              std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
              std::to_string(b.width) + ")");
  require(a.height >= 11 && a.width >= 11,
          "ssim: images must be at least 11x11, got " + std::to_string(a.height) + "x" +
              std::to_string(a.width));
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const int h = a.height, w = a.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  double total = 0.0;
  std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::size_t i = static_cast<std::size_t>(y) * w + x;
        double va = a.at(y, x, ch), vb = b.at(y, x, ch);
        pa[i] = va;
        pb[i] = vb;
        paa[i] = va * va;
        pbb[i] = vb * vb;
        pab[i] = va * vb;
      }
    auto mu_a = detail::ssim_blur(pa, h, w);
    auto mu_b = detail::ssim_blur(pb, h, w);
    auto e_aa = detail::ssim_blur(paa, h, w);
    auto e_bb = detail::ssim_blur(pbb, h, w);
    auto e_ab = detail::ssim_blur(pab, h, w);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = e_aa[i] - ma * ma;
      const double vb = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / 3.0;
}

}  // namespace advart
