#pragma once

#include <cmath>
#include <deque>
#include <stdexcept>
#include <vector>

#include "vipnav/image.hpp"

namespace vipnav {

using EdgeMask = Image<std::uint8_t>;  // 0 or 1

struct CannyParams {
  double sigma = 1.4;
  double low = 0.05;   // m/px
  double high = 0.15;  // m/px
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

/// Replace each invalid pixel with the value of its nearest valid pixel
/// (multi-source BFS over the 4-neighbourhood). Returns false when the image
/// holds no valid pixel at all.
inline bool fill_invalid(const DepthImage& img, std::vector<double>& out) {
  const int w = img.width(), h = img.height();
  out.assign(img.size(), 0.0);
  std::vector<char> seen(img.size(), 0);
  std::deque<int> queue;
  auto px = img.pixels();
  for (int i = 0; i < static_cast<int>(px.size()); ++i) {
    if (px[static_cast<std::size_t>(i)] > 0.0f) {
      out[static_cast<std::size_t>(i)] = px[static_cast<std::size_t>(i)];
      seen[static_cast<std::size_t>(i)] = 1;
      queue.push_back(i);
    }
  }
  if (queue.empty()) return false;
  constexpr int dx[] = {1, -1, 0, 0};
  constexpr int dy[] = {0, 0, 1, -1};
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    const int x = i % w, y = i / w;
    for (int d = 0; d < 4; ++d) {
      const int nx = x + dx[d], ny = y + dy[d];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const int j = ny * w + nx;
      if (seen[static_cast<std::size_t>(j)]) continue;
      seen[static_cast<std::size_t>(j)] = 1;
      out[static_cast<std::size_t>(j)] = out[static_cast<std::size_t>(i)];
      queue.push_back(j);
    }
  }
  return true;
}

/// Separable blur with clamped borders, in double precision.
inline std::vector<double> blur_plane(const std::vector<double>& in, int w, int h, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(in.size()), out(in.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int sx = std::clamp(x + i, 0, w - 1);
        s += k[static_cast<std::size_t>(i + r)] * in[static_cast<std::size_t>(y * w + sx)];
      }
      tmp[static_cast<std::size_t>(y * w + x)] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int sy = std::clamp(y + i, 0, h - 1);
        s += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(sy * w + x)];
      }
      out[static_cast<std::size_t>(y * w + x)] = s;
    }
  }
  return out;
}

}  // namespace detail

/// Gaussian blur of a depth image. Invalid pixels take their nearest valid
/// neighbour's value while blurring and are reset to 0 afterwards.
inline DepthImage gaussian_blur(const DepthImage& img, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  std::vector<double> filled;
  if (!detail::fill_invalid(img, filled)) return img;
  const auto blurred = detail::blur_plane(filled, img.width(), img.height(), sigma);
  DepthImage out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = src[i] > 0.0f ? static_cast<float>(blurred[i]) : kInvalidDepth;
  }
  return out;
}

/// Gradient magnitude (Sobel / 8, so units are meters per pixel) of the
/// blurred image. Exposed for tests and diagnostics.
inline std::vector<double> gradient_magnitude(const DepthImage& img, double sigma,
                                              std::vector<double>* gx_out = nullptr,
                                              std::vector<double>* gy_out = nullptr) {
  const int w = img.width(), h = img.height();
  std::vector<double> filled;
  std::vector<double> mag(img.size(), 0.0);
  if (gx_out) gx_out->assign(img.size(), 0.0);
  if (gy_out) gy_out->assign(img.size(), 0.0);
  if (!detail::fill_invalid(img, filled)) return mag;
  const auto b = detail::blur_plane(filled, w, h, sigma);
  auto at = [&](int x, int y) {
    return b[static_cast<std::size_t>(std::clamp(y, 0, h - 1) * w + std::clamp(x, 0, w - 1))];
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = ((at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)) -
                         (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1))) / 8.0;
      const double gy = ((at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)) -
                         (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1))) / 8.0;
      const auto i = static_cast<std::size_t>(y * w + x);
      mag[i] = std::sqrt(gx * gx + gy * gy);
      if (gx_out) (*gx_out)[i] = gx;
      if (gy_out) (*gy_out)[i] = gy;
    }
  }
  return mag;
}

/// Canny edge detector on metric depth: blur, Sobel, non-maximum suppression
/// over four direction bins, then hysteresis (strong >= high seeds, weak >= low
/// kept when 8-connected to a strong pixel). Invalid pixels never seed.
///
/// NMS ties along the gradient are broken toward the lower-index neighbour so
/// that a symmetric ridge keeps one pixel; the anti-diagonal bin keeps both
/// (no transpose-consistent tie-break exists there).
inline EdgeMask canny(const DepthImage& img, const CannyParams& p = {}) {
  if (!(p.low > 0.0) || !(p.low < p.high)) throw std::invalid_argument("canny: require 0 < low < high");
  const int w = img.width(), h = img.height();
  std::vector<double> gx, gy;
  const auto mag = gradient_magnitude(img, p.sigma, &gx, &gy);
  auto m = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return mag[static_cast<std::size_t>(y * w + x)];
  };

  // tan(22.5 deg)
  constexpr double kTan = 0.41421356237309503;
  std::vector<std::uint8_t> nms(img.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      const double g = mag[i];
      if (g < p.low) continue;
      const double ax = std::abs(gx[i]), ay = std::abs(gy[i]);
      bool keep;
      if (ay < kTan * ax) {
        keep = g > m(x - 1, y) && g >= m(x + 1, y);
      } else if (ax < kTan * ay) {
        keep = g > m(x, y - 1) && g >= m(x, y + 1);
      } else if (gx[i] * gy[i] > 0.0) {
        keep = g > m(x - 1, y - 1) && g >= m(x + 1, y + 1);
      } else {
        keep = g >= m(x + 1, y - 1) && g >= m(x - 1, y + 1);
      }
      nms[i] = keep ? 1 : 0;
    }
  }

  EdgeMask out(w, h, 0);
  std::vector<int> stack;
  auto src = img.pixels();
  for (int i = 0; i < w * h; ++i) {
    const auto u = static_cast<std::size_t>(i);
    if (nms[u] && mag[u] >= p.high && src[u] > 0.0f && !out.pixels()[u]) {
      out.pixels()[u] = 1;
      stack.push_back(i);
      while (!stack.empty()) {
        const int j = stack.back();
        stack.pop_back();
        const int x = j % w, y = j / w;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const auto k = static_cast<std::size_t>(ny * w + nx);
            if (nms[k] && !out.pixels()[k]) {
              out.pixels()[k] = 1;
              stack.push_back(static_cast<int>(k));
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace vipnav
