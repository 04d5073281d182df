#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "vipnav/image.hpp"
#include "vipnav/network.hpp"

namespace vipnav {

/// Channel mean of a conv layer's post-ReLU output, min-max scaled to
/// [0, 255]. Defaults to the middle layer, floor(n_conv / 2). `encoder` is 0
/// for the primary (depth) stack, 1 for the detection stack.
template <class T>
GrayImage extract_feature_map(const NetworkParams<T>& p, const NetInput<T>& in, std::optional<int> layer = std::nullopt,
                              int encoder = 0) {
  const NetworkSpec& spec = p.spec;
  if (encoder < 0 || encoder > 1 || (encoder == 1 && !spec.encoder2)) throw std::invalid_argument("featmap: no such encoder");
  const EncoderSpec& e = encoder == 0 ? spec.encoder1 : *spec.encoder2;
  const int n = static_cast<int>(e.convs.size());
  const int li = layer.value_or(n / 2);
  if (li < 0 || li >= n) throw std::invalid_argument("featmap: layer index " + std::to_string(li) + " outside the conv stack");
  ForwardCache<T> cache;
  forward(p, in, false, nullptr, cache);
  const EncoderCache<T>& c = cache.enc[encoder];
  const Shape3& s = c.shapes[static_cast<std::size_t>(li) + 1];
  const auto& act = c.acts[static_cast<std::size_t>(li) + 1];
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  std::vector<double> mean(plane, 0.0);
  for (int ch = 0; ch < s.c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) mean[i] += static_cast<double>(act[ch * plane + i]);
  }
  for (double& m : mean) m /= s.c;
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  GrayImage out(s.w, s.h, 0);
  const double range = *hi - *lo;
  // Relative tolerance so a constant map stays constant under rounding.
  if (!(range > 1e-9 * std::max(1.0, std::abs(*hi)))) return out;
  auto px = out.pixels();
  for (std::size_t i = 0; i < plane; ++i) {
    px[i] = static_cast<std::uint8_t>(std::lround(255.0 * (mean[i] - *lo) / range));
  }
  return out;
}

/// Palettes: "gray" maps i to (i, i, i); "viridis" interpolates linearly
/// between nine anchors of matplotlib's viridis at i = 0, 32, ..., 224, 255.
inline const std::array<Rgb, 9>& viridis_anchors() {
  static const std::array<Rgb, 9> a = {{{68, 1, 84},
                                        {71, 45, 123},
                                        {59, 82, 139},
                                        {44, 114, 142},
                                        {33, 145, 140},
                                        {40, 174, 128},
                                        {94, 201, 98},
                                        {173, 220, 48},
                                        {253, 231, 37}}};
  return a;
}

inline Rgb palette_color(const std::string& palette, std::uint8_t i) {
  if (palette == "gray" || palette == "grey") return {i, i, i};
  if (palette == "viridis") {
    const auto& a = viridis_anchors();
    const double pos = i < 224 ? i / 32.0 : 7.0 + (i - 224) / 31.0;
    const int k = std::min(7, static_cast<int>(pos));
    const double f = pos - k;
    auto mix = [f](std::uint8_t x, std::uint8_t y) {
      return static_cast<std::uint8_t>(std::lround(x + (static_cast<double>(y) - x) * f));
    };
    const Rgb lo = a[static_cast<std::size_t>(k)], hi = a[static_cast<std::size_t>(k) + 1];
    return {mix(lo.r, hi.r), mix(lo.g, hi.g), mix(lo.b, hi.b)};
  }
  throw std::invalid_argument("unknown palette: " + palette);
}

inline RgbImage recolor(const GrayImage& map, const std::string& palette) {
  std::array<Rgb, 256> lut;
  for (int i = 0; i < 256; ++i) lut[static_cast<std::size_t>(i)] = palette_color(palette, static_cast<std::uint8_t>(i));
  RgbImage out(map.width(), map.height());
  auto src = map.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = lut[src[i]];
  return out;
}

/// Maps a box in input pixels onto a feature map of another resolution.
inline BBox scale_box(const BBox& b, int from_w, int from_h, int to_w, int to_h) {
  BBox out;
  out.x_min = b.x_min * to_w / from_w;
  out.y_min = b.y_min * to_h / from_h;
  out.x_max = std::max(out.x_min + 1, (b.x_max * to_w + from_w - 1) / from_w);
  out.y_max = std::max(out.y_min + 1, (b.y_max * to_h + from_h - 1) / from_h);
  out.x_max = std::min(out.x_max, to_w);
  out.y_max = std::min(out.y_max, to_h);
  return out;
}

}  // namespace vipnav
