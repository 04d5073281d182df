#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace vipnav {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Dense row-major 2-D grid.
template <class Pixel>
class Image {
 public:
  using value_type = Pixel;

  Image() = default;

  Image(int width, int height, Pixel fill = Pixel{})
      : width_(width), height_(height) {
    check_dims(width, height);
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  Image(int width, int height, std::vector<Pixel> data)
      : width_(width), height_(height), data_(std::move(data)) {
    check_dims(width, height);
    if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
      throw std::invalid_argument("image data length does not match width*height");
    }
  }

  [[nodiscard]] int width() const noexcept { return width_; }
  [[nodiscard]] int height() const noexcept { return height_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  Pixel operator()(int x, int y) const noexcept { return data_[index(x, y)]; }
  Pixel& operator()(int x, int y) noexcept { return data_[index(x, y)]; }

  /// Clamped access: out-of-range coordinates read the nearest edge pixel.
  Pixel clamped(int x, int y) const noexcept {
    return (*this)(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1));
  }

  [[nodiscard]] std::span<const Pixel> pixels() const noexcept { return data_; }
  [[nodiscard]] std::span<Pixel> pixels() noexcept { return data_; }

  bool operator==(const Image&) const = default;

 private:
  static void check_dims(int w, int h) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("image dimensions must be positive");
  }
  [[nodiscard]] std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<Pixel> data_;
};

/// Metric depth in meters; 0 marks "no return".
using DepthImage = Image<float>;
using GrayImage = Image<std::uint8_t>;
using RgbImage = Image<Rgb>;

inline constexpr float kInvalidDepth = 0.0f;

template <class A, class B>
bool same_dims(const Image<A>& a, const Image<B>& b) noexcept {
  return a.width() == b.width() && a.height() == b.height();
}

/// Throws unless every value is finite and non-negative.
inline void validate_depth(const DepthImage& img) {
  for (float d : img.pixels()) {
    if (!std::isfinite(d) || d < 0.0f) throw std::invalid_argument("depth image holds a negative or non-finite value");
  }
}

/// Nearest-neighbour resize. Output pixel (x, y) samples source
/// (floor((x + 0.5) * W / w), floor((y + 0.5) * H / h)), i.e. the source
/// pixel whose footprint contains the output pixel centre. Only source values
/// are ever copied, so the invalid-depth sentinel can never blend.
template <class Pixel>
Image<Pixel> resize_nearest(const Image<Pixel>& src, int w, int h) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("resize_nearest: target dimensions must be positive");
  if (w == src.width() && h == src.height()) return src;
  std::vector<int> xs(static_cast<std::size_t>(w));
  for (int x = 0; x < w; ++x) {
    xs[static_cast<std::size_t>(x)] =
        std::min(src.width() - 1, static_cast<int>((2 * static_cast<long long>(x) + 1) * src.width() / (2 * w)));
  }
  Image<Pixel> out(w, h);
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(src.height() - 1, static_cast<int>((2 * static_cast<long long>(y) + 1) * src.height() / (2 * h)));
    for (int x = 0; x < w; ++x) out(x, y) = src(xs[static_cast<std::size_t>(x)], sy);
  }
  return out;
}

/// round(255 * min(d, max_depth) / max_depth), half rounded up; 0 stays 0.
inline GrayImage depth_to_gray(const DepthImage& img, float max_depth) {
  if (!(max_depth > 0.0f)) throw std::invalid_argument("depth_to_gray: max_depth must be positive");
  GrayImage out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double d = src[i];
    if (d <= 0.0) continue;
    const double scaled = 255.0 * std::min(d, static_cast<double>(max_depth)) / max_depth;
    dst[i] = static_cast<std::uint8_t>(std::floor(scaled + 0.5));
  }
  return out;
}

/// Collision-risk grade, 1 (lowest) .. 6 (pedestrians).
class RiskCategory {
 public:
  static constexpr int kLevels = 6;

  constexpr RiskCategory() = default;
  constexpr explicit RiskCategory(int level) : level_(level) {
    if (level < 1 || level > kLevels) throw std::invalid_argument("risk level must be in 1..6");
  }
  static constexpr RiskCategory pedestrian() { return RiskCategory(kLevels); }

  [[nodiscard]] constexpr int level() const noexcept { return level_; }
  constexpr auto operator<=>(const RiskCategory&) const = default;

 private:
  int level_ = 1;
};

/// Pixel box, min corner inclusive, max corner exclusive.
struct BBox {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  [[nodiscard]] int width() const noexcept { return x_max - x_min; }
  [[nodiscard]] int height() const noexcept { return y_max - y_min; }
  [[nodiscard]] long long area() const noexcept {
    return static_cast<long long>(width()) * height();
  }
  [[nodiscard]] bool valid_within(int w, int h) const noexcept {
    return 0 <= x_min && x_min < x_max && x_max <= w && 0 <= y_min && y_min < y_max && y_max <= h;
  }
  [[nodiscard]] bool contains(int x, int y) const noexcept {
    return x >= x_min && x < x_max && y >= y_min && y < y_max;
  }
  bool operator==(const BBox&) const = default;
};

struct Detection {
  std::string class_name;
  RiskCategory category;
  BBox bbox;
  bool operator==(const Detection&) const = default;
};

enum class ReprKind { RGB, RGBNoise, Depth, DepthNoise, SegFC, SegPSP, DepthDet, DepthNoiseDet };

inline constexpr std::array<ReprKind, 8> kAllReprKinds = {
    ReprKind::RGB,   ReprKind::RGBNoise, ReprKind::Depth,    ReprKind::DepthNoise,
    ReprKind::SegFC, ReprKind::SegPSP,   ReprKind::DepthDet, ReprKind::DepthNoiseDet};

constexpr std::string_view to_string(ReprKind k) noexcept {
  switch (k) {
    case ReprKind::RGB: return "RGB";
    case ReprKind::RGBNoise: return "RGBNoise";
    case ReprKind::Depth: return "Depth";
    case ReprKind::DepthNoise: return "DepthNoise";
    case ReprKind::SegFC: return "SegFC";
    case ReprKind::SegPSP: return "SegPSP";
    case ReprKind::DepthDet: return "DepthDet";
    case ReprKind::DepthNoiseDet: return "DepthNoiseDet";
  }
  return "?";
}

inline std::optional<ReprKind> parse_repr_kind(std::string_view s) noexcept {
  for (ReprKind k : kAllReprKinds) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

/// Kinds that pair a depth image with a categorized detection image.
constexpr bool is_dual(ReprKind k) noexcept {
  return k == ReprKind::DepthDet || k == ReprKind::DepthNoiseDet;
}
constexpr bool uses_depth(ReprKind k) noexcept {
  return k == ReprKind::Depth || k == ReprKind::DepthNoise || is_dual(k);
}
constexpr bool is_noisy(ReprKind k) noexcept {
  return k == ReprKind::RGBNoise || k == ReprKind::DepthNoise || k == ReprKind::DepthNoiseDet;
}
constexpr bool is_rgb(ReprKind k) noexcept { return k == ReprKind::RGB || k == ReprKind::RGBNoise; }

using PrimaryImage = std::variant<DepthImage, GrayImage, RgbImage>;

inline int width_of(const PrimaryImage& img) noexcept {
  return std::visit([](const auto& i) { return i.width(); }, img);
}
inline int height_of(const PrimaryImage& img) noexcept {
  return std::visit([](const auto& i) { return i.height(); }, img);
}

/// The observation handed to the policy: one primary image and, for the
/// dual kinds, the categorized detection image.
class ReprBundle {
 public:
  ReprBundle(ReprKind kind, PrimaryImage primary, std::optional<GrayImage> semantic = std::nullopt)
      : kind_(kind), primary_(std::move(primary)), semantic_(std::move(semantic)) {
    if (is_dual(kind) != semantic_.has_value()) {
      throw std::invalid_argument("ReprBundle: semantic image must be present exactly for dual kinds");
    }
    const bool depth = std::holds_alternative<DepthImage>(primary_);
    const bool rgb = std::holds_alternative<RgbImage>(primary_);
    if (uses_depth(kind) != depth || is_rgb(kind) != rgb) {
      throw std::invalid_argument("ReprBundle: primary image type does not match kind");
    }
    if (semantic_ && (semantic_->width() != width() || semantic_->height() != height())) {
      throw std::invalid_argument("ReprBundle: image dimensions differ");
    }
  }

  [[nodiscard]] ReprKind kind() const noexcept { return kind_; }
  [[nodiscard]] const PrimaryImage& primary() const noexcept { return primary_; }
  [[nodiscard]] const std::optional<GrayImage>& semantic() const noexcept { return semantic_; }
  [[nodiscard]] int width() const noexcept { return width_of(primary_); }
  [[nodiscard]] int height() const noexcept { return height_of(primary_); }

  bool operator==(const ReprBundle&) const = default;

 private:
  ReprKind kind_;
  PrimaryImage primary_;
  std::optional<GrayImage> semantic_;
};

}  // namespace vipnav
