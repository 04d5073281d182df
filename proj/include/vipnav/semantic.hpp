#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vipnav/image.hpp"

namespace vipnav {

/// class name -> risk category, and risk category -> fill intensity.
class CategoryMap {
 public:
  /// Simulator vocabulary: wall fixtures low, furniture mid, people top.
  static CategoryMap defaults() {
    CategoryMap m;
    m.set("wall", RiskCategory(1));
    m.set("door", RiskCategory(1));
    m.set("shelf", RiskCategory(2));
    m.set("cabinet", RiskCategory(2));
    m.set("box", RiskCategory(3));
    m.set("trash_can", RiskCategory(3));
    m.set("foam_board", RiskCategory(3));
    m.set("chair", RiskCategory(4));
    m.set("table", RiskCategory(4));
    m.set("plant", RiskCategory(5));
    m.set("bicycle", RiskCategory(5));
    m.set("person", RiskCategory::pedestrian());
    m.set("pedestrian", RiskCategory::pedestrian());
    return m;
  }

  /// Parse `class level` lines; `#` starts a comment. Entries override the
  /// defaults when `base` is given.
  static CategoryMap parse(std::istream& in) { return parse(in, CategoryMap{}); }
  static CategoryMap parse(std::istream& in, CategoryMap base) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      std::string name;
      if (!(ls >> name)) continue;
      int level = 0;
      std::string extra;
      if (!(ls >> level) || (ls >> extra) || level < 1 || level > RiskCategory::kLevels) {
        throw std::runtime_error("category map line " + std::to_string(lineno) + ": expected `class level` with level 1..6");
      }
      base.set(name, RiskCategory(level));
    }
    return base;
  }

  static CategoryMap load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open category map: " + path);
    return parse(in, defaults());
  }

  void set(const std::string& class_name, RiskCategory c) { table_[class_name] = c; }

  void set_default(RiskCategory c) noexcept { fallback_ = c; }
  [[nodiscard]] RiskCategory default_category() const noexcept { return fallback_; }

  [[nodiscard]] bool knows(const std::string& class_name) const { return table_.contains(class_name); }

  [[nodiscard]] RiskCategory categorize(const std::string& class_name) const {
    auto it = table_.find(class_name);
    return it == table_.end() ? fallback_ : it->second;
  }

  /// round(255 * level / 6): 43, 85, 128, 170, 213, 255.
  static constexpr std::uint8_t intensity(RiskCategory c) noexcept {
    return static_cast<std::uint8_t>((255 * c.level() * 2 + RiskCategory::kLevels) / (2 * RiskCategory::kLevels));
  }

  [[nodiscard]] const std::map<std::string, RiskCategory>& entries() const noexcept { return table_; }

 private:
  std::map<std::string, RiskCategory> table_;
  RiskCategory fallback_{3};
};

inline RiskCategory categorize(const std::string& class_name, const CategoryMap& map) {
  return map.categorize(class_name);
}

/// Categorized detection image: zero background, each box filled with its
/// category intensity, overlaps resolved to the highest intensity.
inline GrayImage rasterize(const std::vector<Detection>& dets, int w, int h) {
  GrayImage out(w, h, 0);
  for (const Detection& d : dets) {
    if (!d.bbox.valid_within(w, h)) throw std::out_of_range("rasterize: detection box outside the image");
    const std::uint8_t v = CategoryMap::intensity(d.category);
    for (int y = d.bbox.y_min; y < d.bbox.y_max; ++y) {
      for (int x = d.bbox.x_min; x < d.bbox.x_max; ++x) out(x, y) = std::max(out(x, y), v);
    }
  }
  return out;
}

/// Re-categorizes every detection through `map` before rasterizing.
inline GrayImage rasterize(const std::vector<Detection>& dets, int w, int h, const CategoryMap& map) {
  std::vector<Detection> mapped = dets;
  for (Detection& d : mapped) d.category = map.categorize(d.class_name);
  return rasterize(mapped, w, h);
}

}  // namespace vipnav
