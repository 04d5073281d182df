#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vipnav/command.hpp"
#include "vipnav/depth_noise.hpp"
#include "vipnav/image.hpp"
#include "vipnav/network.hpp"
#include "vipnav/semantic.hpp"

namespace vipnav {

/// Depth scale used for network input: depth / 8 m, clamped to [0, 1].
inline constexpr double kDepthInputScale = 8.0;

/// Flat colour for a simulator class. Unknown classes get a hashed colour.
inline Rgb class_color(const std::string& class_name) {
  static const std::array<std::pair<const char*, Rgb>, 13> table = {{
      {"wall", {180, 180, 170}},   {"door", {140, 100, 60}},    {"shelf", {120, 90, 50}},
      {"cabinet", {90, 90, 110}},  {"box", {200, 160, 90}},     {"trash_can", {60, 120, 60}},
      {"foam_board", {230, 230, 230}}, {"chair", {160, 40, 40}}, {"table", {110, 70, 40}},
      {"plant", {40, 160, 60}},    {"bicycle", {40, 60, 160}},  {"person", {220, 120, 90}},
      {"pedestrian", {220, 120, 90}},
  }};
  if (class_name.empty()) return {0, 0, 0};
  for (const auto& [name, c] : table) {
    if (class_name == name) return c;
  }
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : class_name) h = (h ^ ch) * 0x100000001b3ull;
  return {static_cast<std::uint8_t>(64 + (h & 127)), static_cast<std::uint8_t>(64 + ((h >> 8) & 127)),
          static_cast<std::uint8_t>(64 + ((h >> 16) & 127))};
}

/// Raw simulator output for one frame, at sensor resolution.
struct RawFrame {
  const DepthImage& depth;
  const GrayImage& labels;  // class index per pixel
  const std::vector<std::string>& vocabulary;
  const std::vector<Detection>& detections;
};

namespace detail {
inline const std::string& label_class(const RawFrame& f, std::uint8_t label) {
  if (label >= f.vocabulary.size()) throw std::out_of_range("label image refers to class " + std::to_string(label) + " outside the vocabulary");
  return f.vocabulary[label];
}
}  // namespace detail

/// Builds the observation of `kind` for one frame and resizes it to
/// (width, height). Noise is applied at sensor resolution, before resizing.
///   Depth / DepthNoise       clean or augmented depth
///   DepthDet / DepthNoiseDet depth plus categorized detection image
///   RGB / RGBNoise           flat class colours; the noisy variant adds
///                            per-pixel salt-and-pepper
///   SegFC / SegPSP           ground-truth class mask drawn at the class's
///                            category intensity
inline ReprBundle make_bundle(ReprKind kind, const RawFrame& f, const CategoryMap& categories,
                              const NoiseParams& noise, const RngStream& rng, int width, int height) {
  if (!same_dims(f.depth, f.labels)) throw std::invalid_argument("make_bundle: depth and label images differ in size");
  const int w = f.depth.width(), h = f.depth.height();
  if (uses_depth(kind)) {
    DepthImage depth = is_noisy(kind) ? augment(f.depth, noise, rng) : f.depth;
    depth = resize_nearest(depth, width, height);
    if (!is_dual(kind)) return ReprBundle(kind, std::move(depth));
    GrayImage sem = resize_nearest(rasterize(f.detections, w, h, categories), width, height);
    return ReprBundle(kind, std::move(depth), std::move(sem));
  }
  if (is_rgb(kind)) {
    RgbImage rgb(w, h);
    auto src = f.labels.pixels();
    auto dst = rgb.pixels();
    std::vector<Rgb> lut(f.vocabulary.size());
    for (std::size_t i = 0; i < lut.size(); ++i) lut[i] = class_color(f.vocabulary[i]);
    for (std::size_t i = 0; i < src.size(); ++i) {
      detail::label_class(f, src[i]);
      dst[i] = lut[src[i]];
    }
    if (kind == ReprKind::RGBNoise && noise.sp_density > 0.0) {
      RngStream r = rng.substream(5);
      for (Rgb& p : dst) {
        const std::uint64_t u = r.next_u64();
        if (static_cast<double>(u >> 11) * 0x1.0p-53 < noise.sp_density) p = (u & 1u) ? Rgb{255, 255, 255} : Rgb{0, 0, 0};
      }
    }
    return ReprBundle(kind, resize_nearest(rgb, width, height));
  }
  GrayImage seg(w, h, 0);
  auto src = f.labels.pixels();
  auto dst = seg.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] == 0) continue;
    dst[i] = CategoryMap::intensity(categories.categorize(detail::label_class(f, src[i])));
  }
  return ReprBundle(kind, resize_nearest(seg, width, height));
}

inline int input_channels(ReprKind kind) noexcept { return is_rgb(kind) ? 3 : 1; }

/// Network spec for a representation: dual encoders for the paired kinds.
inline NetworkSpec spec_for(ReprKind kind, int width = 256, int height = 192) {
  return is_dual(kind) ? NetworkSpec::dual(width, height) : NetworkSpec::single(input_channels(kind), width, height);
}

/// Scales a bundle into network input planes.
template <class T>
NetInput<T> to_input(const ReprBundle& b, DirectionCommand cmd) {
  NetInput<T> in;
  const auto& p = b.primary();
  if (const auto* d = std::get_if<DepthImage>(&p)) {
    in.primary.reserve(d->size());
    for (float v : d->pixels()) in.primary.push_back(static_cast<T>(std::clamp(v / kDepthInputScale, 0.0, 1.0)));
  } else if (const auto* g = std::get_if<GrayImage>(&p)) {
    in.primary.reserve(g->size());
    for (std::uint8_t v : g->pixels()) in.primary.push_back(static_cast<T>(v / 255.0));
  } else {
    const auto& rgb = std::get<RgbImage>(p);
    const std::size_t n = rgb.size();
    in.primary.resize(3 * n);
    auto px = rgb.pixels();
    for (std::size_t i = 0; i < n; ++i) {
      in.primary[i] = static_cast<T>(px[i].r / 255.0);
      in.primary[n + i] = static_cast<T>(px[i].g / 255.0);
      in.primary[2 * n + i] = static_cast<T>(px[i].b / 255.0);
    }
  }
  if (b.semantic()) {
    in.semantic.reserve(b.semantic()->size());
    for (std::uint8_t v : b.semantic()->pixels()) in.semantic.push_back(static_cast<T>(v / 255.0));
  }
  in.command = one_hot<T>(cmd);
  return in;
}

}  // namespace vipnav
