#pragma once

#include <cmath>
#include <vector>

#include "advart/image.hpp"

namespace testutil {

// Independent SSIM reference: direct per-window loops on Gaussian-weighted
// central moments. Same parameterization as the library (11x11 window,
// sigma 1.5, C1=1e-4, C2=9e-4, valid interior, channel average) but a
// different computational route, so it serves as an oracle.
inline double ssim_reference(const advart::ImageRGB& a, const advart::ImageRGB& b) {
  std::vector<double> w(121);
  {
    double s = 0.0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) {
        double d2 = (i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0);
        w[static_cast<std::size_t>(i * 11 + j)] = std::exp(-d2 / (2.0 * 1.5 * 1.5));
        s += w[static_cast<std::size_t>(i * 11 + j)];
      }
    for (auto& v : w) v /= s;
  }
  const double c1 = 1e-4, c2 = 9e-4;
  const int h = a.height, ww = a.width;
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + 11 <= h; ++y)
      for (int x = 0; x + 11 <= ww; ++x) {
        double mu_a = 0.0, mu_b = 0.0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double wt = w[static_cast<std::size_t>(i * 11 + j)];
            mu_a += wt * a.at(y + i, x + j, ch);
            mu_b += wt * b.at(y + i, x + j, ch);
          }
        double va = 0.0, vb = 0.0, cov = 0.0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double wt = w[static_cast<std::size_t>(i * 11 + j)];
            const double da = a.at(y + i, x + j, ch) - mu_a;
            const double db = b.at(y + i, x + j, ch) - mu_b;
            va += wt * da * da;
            vb += wt * db * db;
            cov += wt * da * db;
          }
        acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
        ++count;
      }
    total += acc / count;
  }
  return total / 3.0;
}

}  // namespace testutil
