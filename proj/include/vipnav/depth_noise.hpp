#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vipnav/edge_detect.hpp"
#include "vipnav/image.hpp"
#include "vipnav/rng.hpp"

namespace vipnav {

/// Depth written for "salt" pixels: the sensor's maximum range.
inline constexpr float kSaltDepth = 8.0f;

struct NoiseParams {
  double xi_min = 1.0;
  double xi_max = 1.2;
  double alpha = 36.0;
  double beta = 24.0;
  double mask_ratio_max = 0.30;
  double sp_density = 0.005;
  CannyParams canny;

  void validate() const {
    if (!(1.0 <= xi_min && xi_min <= xi_max)) throw std::invalid_argument("noise: require 1 <= xi_min <= xi_max");
    if (!(alpha > 0.0 && beta > 0.0)) throw std::invalid_argument("noise: alpha and beta must be positive");
    if (!(mask_ratio_max >= 0.0 && mask_ratio_max <= 1.0)) throw std::invalid_argument("noise: mask_ratio_max must be in [0, 1]");
    if (!(sp_density >= 0.0 && sp_density < 1.0)) throw std::invalid_argument("noise: sp_density must be in [0, 1)");
    if (!(canny.sigma > 0.0 && canny.low > 0.0 && canny.low < canny.high)) throw std::invalid_argument("noise: invalid canny thresholds");
  }
};

inline void to_json(nlohmann::json& j, const CannyParams& p) {
  j = {{"sigma", p.sigma}, {"low", p.low}, {"high", p.high}};
}
inline void from_json(const nlohmann::json& j, CannyParams& p) {
  p.sigma = j.value("sigma", p.sigma);
  p.low = j.value("low", p.low);
  p.high = j.value("high", p.high);
}
inline void to_json(nlohmann::json& j, const NoiseParams& p) {
  j = {{"xi_min", p.xi_min},   {"xi_max", p.xi_max},
       {"alpha", p.alpha},     {"beta", p.beta},
       {"mask_ratio_max", p.mask_ratio_max},
       {"sp_density", p.sp_density},
       {"canny", p.canny}};
}
/// Missing keys keep their defaults, so partial config files are fine.
inline void from_json(const nlohmann::json& j, NoiseParams& p) {
  p.xi_min = j.value("xi_min", p.xi_min);
  p.xi_max = j.value("xi_max", p.xi_max);
  p.alpha = j.value("alpha", p.alpha);
  p.beta = j.value("beta", p.beta);
  p.mask_ratio_max = j.value("mask_ratio_max", p.mask_ratio_max);
  p.sp_density = j.value("sp_density", p.sp_density);
  if (j.contains("canny")) j.at("canny").get_to(p.canny);
}

/// Kinect edge-noise standard deviation at true depth z (meters).
constexpr double edge_sigma(double z, double xi) noexcept {
  return (0.0012 + 0.0019 * (z - 0.4) * (z - 0.4)) * xi;
}

/// Replace every valid edge pixel with a draw from Normal(z, edge_sigma(z, xi)),
/// clamped at 0. One xi ~ U[xi_min, xi_max] per image.
inline DepthImage edge_noise(const DepthImage& img, const EdgeMask& mask, const NoiseParams& params,
                             RngStream& rng) {
  if (!same_dims(img, mask)) throw std::invalid_argument("edge_noise: mask dimensions differ from image");
  const double xi = rng.uniform(params.xi_min, params.xi_max);
  DepthImage out = img;
  auto px = out.pixels();
  auto m = mask.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (!m[i] || px[i] <= 0.0f) continue;
    const double z = px[i];
    const double noisy = rng.normal(z, edge_sigma(z, xi));
    px[i] = static_cast<float>(std::max(0.0, noisy));
  }
  return out;
}

/// Border dropout mask. Each of floor(r*w*h/2) steps zeroes one pixel drawn
/// from a truncated Gaussian on the column axis (std w/alpha, |x| <= w/2,
/// negative x wrapped to the right border) with a uniform row, and one pixel
/// with a uniform column and a truncated Gaussian row (std h/beta, wrapped to
/// the bottom border).
inline DepthImage border_mask(const DepthImage& img, double r, const NoiseParams& params, RngStream& rng) {
  if (!(r >= 0.0 && r <= params.mask_ratio_max)) throw std::invalid_argument("border_mask: ratio out of range");
  const int w = img.width(), h = img.height();
  const double wd = w, hd = h;
  const auto steps = static_cast<long long>(std::floor(r * wd * hd / 2.0));
  DepthImage out = img;
  auto to_index = [](double v, int n) { return std::clamp(static_cast<int>(std::floor(v)), 0, n - 1); };
  for (long long step = 0; step < steps; ++step) {
    double x1 = rng.truncated_normal(0.0, wd / params.alpha, wd / 2.0);
    const double y1 = rng.uniform(0.0, hd);
    const double x2 = rng.uniform(0.0, wd);
    double y2 = rng.truncated_normal(0.0, hd / params.beta, hd / 2.0);
    if (x1 < 0.0) x1 += wd;
    if (y2 < 0.0) y2 += hd;
    out(to_index(x1, w), to_index(y1, h)) = kInvalidDepth;
    out(to_index(x2, w), to_index(y2, h)) = kInvalidDepth;
  }
  return out;
}

/// Each pixel independently becomes salt (salt_depth) or pepper (0) with
/// probability density, split evenly.
inline DepthImage salt_pepper(const DepthImage& img, double density, RngStream& rng,
                              float salt_depth = kSaltDepth) {
  if (!(density >= 0.0 && density < 1.0)) throw std::invalid_argument("salt_pepper: density must be in [0, 1)");
  DepthImage out = img;
  if (density == 0.0) return out;
  for (float& d : out.pixels()) {
    const std::uint64_t u = rng.next_u64();
    if (static_cast<double>(u >> 11) * 0x1.0p-53 < density) d = (u & 1u) ? salt_depth : kInvalidDepth;
  }
  return out;
}

/// Full depth noise pipeline: Canny on the clean image, edge noise, border
/// dropout with r ~ U[0, mask_ratio_max], then salt-and-pepper. Every stage
/// draws from its own substream of rng.
inline DepthImage augment(const DepthImage& img, const NoiseParams& params, const RngStream& rng) {
  params.validate();
  const EdgeMask edges = canny(img, params.canny);
  RngStream edge_rng = rng.substream(1);
  RngStream ratio_rng = rng.substream(2);
  RngStream mask_rng = rng.substream(3);
  RngStream sp_rng = rng.substream(4);
  DepthImage out = edge_noise(img, edges, params, edge_rng);
  const double r = ratio_rng.uniform(0.0, params.mask_ratio_max);
  out = border_mask(out, std::min(r, params.mask_ratio_max), params, mask_rng);
  return salt_pepper(out, params.sp_density, sp_rng);
}

}  // namespace vipnav
