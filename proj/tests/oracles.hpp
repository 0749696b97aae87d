#pragma once

// Independent reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ufid/core/image.hpp"

namespace oracle {

// Area under the ROC curve traced by sweeping the threshold over every
// distinct score from high to low, integrated with the trapezoid rule.
inline double roc_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::set<double, std::greater<>> cuts(pos.begin(), pos.end());
  cuts.insert(neg.begin(), neg.end());
  double area = 0.0, prev_tpr = 0.0, prev_fpr = 0.0;
  for (double t : cuts) {
    const double tpr = double(std::count_if(pos.begin(), pos.end(), [t](double s) { return s >= t; })) / pos.size();
    const double fpr = double(std::count_if(neg.begin(), neg.end(), [t](double s) { return s >= t; })) / neg.size();
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  return area;
}

// Windowed SSIM evaluated window by window with explicit luminance, contrast
// and structure terms.
inline double ssim(const ufid::Image& a, const ufid::Image& b, std::size_t win = 8, double k1 = 0.01,
                   double k2 = 0.03, double range = 1.0) {
  const auto s = a.shape();
  const double c1 = std::pow(k1 * range, 2), c2 = std::pow(k2 * range, 2), c3 = c2 / 2.0;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t h0 = 0; h0 + win <= s.height; ++h0)
      for (std::size_t w0 = 0; w0 + win <= s.width; ++w0) {
        std::vector<double> xa, xb;
        for (std::size_t h = h0; h < h0 + win; ++h)
          for (std::size_t w = w0; w < w0 + win; ++w) {
            xa.push_back(a.at(h, w, c));
            xb.push_back(b.at(h, w, c));
          }
        const double n = double(xa.size());
        double ma = 0, mb = 0;
        for (std::size_t i = 0; i < xa.size(); ++i) ma += xa[i], mb += xb[i];
        ma /= n;
        mb /= n;
        double va = 0, vb = 0, cov = 0;
        for (std::size_t i = 0; i < xa.size(); ++i) {
          va += (xa[i] - ma) * (xa[i] - ma);
          vb += (xb[i] - mb) * (xb[i] - mb);
          cov += (xa[i] - ma) * (xb[i] - mb);
        }
        va /= n;
        vb /= n;
        cov /= n;
        const double sa = std::sqrt(va), sb = std::sqrt(vb);
        const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        const double con = (2 * sa * sb + c2) / (va + vb + c2);
        const double str = (cov + c3) / (sa * sb + c3);
        total += l * con * str;
        ++count;
      }
  return total / double(count);
}

inline ufid::Image random_pixel_image(std::mt19937_64& gen, ufid::Shape shape) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> d(shape.size());
  for (auto& x : d) x = u(gen);
  return ufid::Image(shape, ufid::ImageKind::pixel, std::move(d));
}

// Pixel image correlated with `base`: base + noise, clamped.
inline ufid::Image perturbed(std::mt19937_64& gen, const ufid::Image& base, float noise) {
  std::normal_distribution<float> n(0.0f, noise);
  std::vector<float> d(base.data().begin(), base.data().end());
  for (auto& x : d) x = std::clamp(x + n(gen), 0.0f, 1.0f);
  return ufid::Image(base.shape(), ufid::ImageKind::pixel, std::move(d));
}

}  // namespace oracle
