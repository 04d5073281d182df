#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vipnav/image.hpp"
#include "vipnav/semantic.hpp"

namespace vipnav {

struct Vec2 {
  double x = 0.0, y = 0.0;

  Vec2 operator+(Vec2 o) const noexcept { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const noexcept { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const noexcept { return {x * s, y * s}; }
  [[nodiscard]] double dot(Vec2 o) const noexcept { return x * o.x + y * o.y; }
  [[nodiscard]] double cross(Vec2 o) const noexcept { return x * o.y - y * o.x; }
  [[nodiscard]] double norm() const noexcept { return std::hypot(x, y); }
  bool operator==(const Vec2&) const = default;
};

inline double wrap_angle(double a) noexcept {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

struct Pose {
  double x = 0.0, y = 0.0, heading = 0.0;
  [[nodiscard]] Vec2 position() const noexcept { return {x, y}; }
  [[nodiscard]] Vec2 forward() const noexcept { return {std::cos(heading), std::sin(heading)}; }
  [[nodiscard]] Vec2 left() const noexcept { return {-std::sin(heading), std::cos(heading)}; }
  bool operator==(const Pose&) const = default;
};

struct RobotLimits {
  double v_max = 0.6;      // m/s
  double omega_max = 1.0;  // rad/s
  double radius = 0.18;    // m
};

struct RobotState {
  Pose pose;
  double v = 0.0;
  double omega = 0.0;
};

struct CameraIntrinsics {
  int width = 256;
  int height = 192;
  double hfov = 70.0 * std::numbers::pi / 180.0;
  double max_range = 8.0;  // m
  double mount_height = 0.45;  // m above the floor

  void validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera: dimensions must be positive");
    if (!(hfov > 0.0 && hfov < std::numbers::pi)) throw std::invalid_argument("camera: fov must be in (0, pi)");
    if (!(max_range > 0.0)) throw std::invalid_argument("camera: max_range must be positive");
  }
  /// Focal length in pixels (square pixels).
  [[nodiscard]] double focal() const noexcept { return 0.5 * width / std::tan(0.5 * hfov); }
};

enum class ShapeKind { Segment, Box, Circle };
enum class InstanceRole { Wall, Obstacle, Pedestrian };

/// One extruded footprint in the world at a given instant.
struct Instance {
  ShapeKind shape = ShapeKind::Segment;
  InstanceRole role = InstanceRole::Wall;
  Vec2 a, b;           // segment endpoints, or box min/max corners
  Vec2 center;         // circle centre
  double radius = 0.0; // circle radius
  double height = 2.5;
  std::string class_name = "wall";

  [[nodiscard]] bool detectable() const noexcept { return role != InstanceRole::Wall; }

  /// Distance from p to the footprint (0 inside closed shapes).
  [[nodiscard]] double distance(Vec2 p) const noexcept {
    switch (shape) {
      case ShapeKind::Segment: {
        const Vec2 d = b - a;
        const double len2 = d.dot(d);
        const double t = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
        return (p - (a + d * t)).norm();
      }
      case ShapeKind::Box: {
        const double dx = std::max({a.x - p.x, 0.0, p.x - b.x});
        const double dy = std::max({a.y - p.y, 0.0, p.y - b.y});
        return std::hypot(dx, dy);
      }
      case ShapeKind::Circle:
        return std::max(0.0, (p - center).norm() - radius);
    }
    return 0.0;
  }

  /// Ray p + t*d (t > 0) against the footprint: entry and exit parameters.
  /// Segments have zero thickness, so entry == exit.
  [[nodiscard]] std::optional<std::pair<double, double>> intersect(Vec2 p, Vec2 d) const noexcept {
    constexpr double kEps = 1e-12;
    switch (shape) {
      case ShapeKind::Segment: {
        const Vec2 e = b - a;
        const double denom = d.cross(e);
        if (std::abs(denom) < kEps) return std::nullopt;
        const Vec2 ap = a - p;
        const double t = ap.cross(e) / denom;
        const double s = ap.cross(d) / denom;
        if (t <= kEps || s < 0.0 || s > 1.0) return std::nullopt;
        return std::pair{t, t};
      }
      case ShapeKind::Box: {
        double t0 = -std::numeric_limits<double>::infinity();
        double t1 = std::numeric_limits<double>::infinity();
        const double o[2] = {p.x, p.y}, dir[2] = {d.x, d.y}, lo[2] = {a.x, a.y}, hi[2] = {b.x, b.y};
        for (int k = 0; k < 2; ++k) {
          if (std::abs(dir[k]) < kEps) {
            if (o[k] < lo[k] || o[k] > hi[k]) return std::nullopt;
          } else {
            double ta = (lo[k] - o[k]) / dir[k], tb = (hi[k] - o[k]) / dir[k];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
          }
        }
        if (t0 > t1 || t1 <= kEps || t0 <= kEps) return std::nullopt;
        return std::pair{t0, t1};
      }
      case ShapeKind::Circle: {
        const Vec2 oc = p - center;
        const double qa = d.dot(d), qb = 2.0 * oc.dot(d), qc = oc.dot(oc) - radius * radius;
        const double disc = qb * qb - 4.0 * qa * qc;
        if (disc < 0.0) return std::nullopt;
        const double sq = std::sqrt(disc);
        const double t0 = (-qb - sq) / (2.0 * qa), t1 = (-qb + sq) / (2.0 * qa);
        if (t0 <= kEps) return std::nullopt;
        return std::pair{t0, t1};
      }
    }
    return std::nullopt;
  }
};

struct Obstacle {
  ShapeKind shape = ShapeKind::Box;  // Box or Circle
  Vec2 center;
  Vec2 half_size;  // box
  double radius = 0.0;  // cylinder
  double height = 1.0;
  std::string class_name = "box";
};

/// Constant-speed waypoint follower. Closed paths loop; open paths ping-pong.
struct Pedestrian {
  std::vector<Vec2> path;
  double speed = 0.5;
  double radius = 0.25;
  double height = 1.7;
  bool loop = false;

  [[nodiscard]] Vec2 position(double t) const {
    if (path.size() == 1 || speed <= 0.0) return path.front();
    std::vector<Vec2> pts = path;
    if (loop) {
      pts.push_back(path.front());
    } else {
      for (auto it = path.rbegin() + 1; it != path.rend(); ++it) pts.push_back(*it);
    }
    double total = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) total += (pts[i] - pts[i - 1]).norm();
    if (total <= 0.0) return path.front();
    double s = std::fmod(speed * t, total);
    if (s < 0.0) s += total;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      const double len = (pts[i] - pts[i - 1]).norm();
      if (s <= len && len > 0.0) return pts[i - 1] + (pts[i] - pts[i - 1]) * (s / len);
      s -= len;
    }
    return pts.back();
  }
};

/// Navigation graph on corridor centrelines. Nodes of degree >= 3 are
/// intersections where a direction command applies.
struct NavGraph {
  std::vector<Vec2> nodes;
  std::vector<std::pair<int, int>> edges;

  [[nodiscard]] std::vector<int> neighbours(int n) const {
    std::vector<int> out;
    for (const auto& [a, b] : edges) {
      if (a == n) out.push_back(b);
      if (b == n) out.push_back(a);
    }
    return out;
  }
  [[nodiscard]] int degree(int n) const { return static_cast<int>(neighbours(n).size()); }
  [[nodiscard]] bool is_intersection(int n) const { return degree(n) >= 3; }

  [[nodiscard]] double distance_to_edges(Vec2 p) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [a, b] : edges) {
      Instance seg;
      seg.a = nodes[static_cast<std::size_t>(a)];
      seg.b = nodes[static_cast<std::size_t>(b)];
      best = std::min(best, seg.distance(p));
    }
    return best;
  }
};

struct RouteSpec {
  std::string name;
  std::vector<int> nodes;
  double time_limit = 100.0;
  std::vector<int> pedestrians;
};

struct Scene {
  std::string name;
  Vec2 bounds_min, bounds_max;
  std::vector<Instance> walls;
  std::vector<Obstacle> obstacles;
  std::vector<Pedestrian> pedestrians;
  NavGraph graph;
  std::vector<RouteSpec> routes;
  double wall_height = 2.5;

  /// All footprints at time t (pedestrians placed on their paths).
  [[nodiscard]] std::vector<Instance> snapshot(double t) const {
    std::vector<Instance> out = walls;
    for (const Obstacle& o : obstacles) {
      Instance in;
      in.role = InstanceRole::Obstacle;
      in.shape = o.shape;
      in.height = o.height;
      in.class_name = o.class_name;
      if (o.shape == ShapeKind::Box) {
        in.a = o.center - o.half_size;
        in.b = o.center + o.half_size;
      } else {
        in.center = o.center;
        in.radius = o.radius;
      }
      out.push_back(in);
    }
    for (const Pedestrian& p : pedestrians) {
      Instance in;
      in.role = InstanceRole::Pedestrian;
      in.shape = ShapeKind::Circle;
      in.center = p.position(t);
      in.radius = p.radius;
      in.height = p.height;
      in.class_name = "person";
      out.push_back(in);
    }
    return out;
  }

  /// Copy keeping only the listed pedestrians.
  [[nodiscard]] Scene with_pedestrians(const std::vector<int>& keep) const {
    Scene s = *this;
    s.pedestrians.clear();
    for (int i : keep) s.pedestrians.push_back(pedestrians.at(static_cast<std::size_t>(i)));
    return s;
  }

  /// Sorted class vocabulary; index 0 is reserved for "no return".
  [[nodiscard]] std::vector<std::string> class_vocabulary() const {
    std::vector<std::string> v;
    for (const auto& w : walls) v.push_back(w.class_name);
    for (const auto& o : obstacles) v.push_back(o.class_name);
    if (!pedestrians.empty()) v.push_back("person");
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    v.insert(v.begin(), "");
    return v;
  }

  [[nodiscard]] const RouteSpec& route(const std::string& route_name) const {
    for (const auto& r : routes) {
      if (r.name == route_name) return r;
    }
    throw std::invalid_argument("scene " + name + " has no route named " + route_name);
  }
};

inline double clearance(std::span<const Instance> world, Vec2 p, double robot_radius,
                        bool include_pedestrians = true) {
  double best = std::numeric_limits<double>::infinity();
  for (const Instance& in : world) {
    if (!include_pedestrians && in.role == InstanceRole::Pedestrian) continue;
    best = std::min(best, in.distance(p));
  }
  return best - robot_radius;
}

inline bool in_collision(std::span<const Instance> world, Vec2 p, double robot_radius) {
  return clearance(world, p, robot_radius) < 0.0;
}

// ---------------------------------------------------------------------------
// Scene files

namespace detail {
inline Vec2 vec2(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

inline void check_scene(const Scene& s) {
  auto inside = [&](Vec2 p) {
    return p.x >= s.bounds_min.x && p.x <= s.bounds_max.x && p.y >= s.bounds_min.y && p.y <= s.bounds_max.y;
  };
  for (const auto& o : s.obstacles) {
    const Vec2 ext = o.shape == ShapeKind::Box ? o.half_size : Vec2{o.radius, o.radius};
    if (!inside(o.center - ext) || !inside(o.center + ext)) {
      throw std::runtime_error("scene " + s.name + ": obstacle '" + o.class_name + "' outside bounds");
    }
  }
  const int n = static_cast<int>(s.graph.nodes.size());
  for (const auto& [a, b] : s.graph.edges) {
    if (a < 0 || b < 0 || a >= n || b >= n || a == b) throw std::runtime_error("scene " + s.name + ": bad graph edge");
  }
  for (const auto& r : s.routes) {
    if (r.nodes.size() < 2) throw std::runtime_error("scene " + s.name + ": route " + r.name + " needs >= 2 nodes");
    for (std::size_t i = 1; i < r.nodes.size(); ++i) {
      const auto nb = s.graph.neighbours(r.nodes[i - 1]);
      if (std::find(nb.begin(), nb.end(), r.nodes[i]) == nb.end()) {
        throw std::runtime_error("scene " + s.name + ": route " + r.name + " follows a missing edge");
      }
    }
    for (int p : r.pedestrians) {
      if (p < 0 || p >= static_cast<int>(s.pedestrians.size())) {
        throw std::runtime_error("scene " + s.name + ": route " + r.name + " names a missing pedestrian");
      }
    }
  }
  // Pedestrian paths must stay clear of static geometry.
  Scene statics = s;
  statics.pedestrians.clear();
  const auto world = statics.snapshot(0.0);
  for (std::size_t i = 0; i < s.pedestrians.size(); ++i) {
    const auto& p = s.pedestrians[i];
    const auto& path = p.path;
    const std::size_t segs = p.loop ? path.size() : path.size() - 1;
    for (std::size_t k = 0; k < segs; ++k) {
      const Vec2 a = path[k], b = path[(k + 1) % path.size()];
      const int samples = std::max(2, static_cast<int>((b - a).norm() / 0.05));
      for (int j = 0; j <= samples; ++j) {
        const Vec2 q = a + (b - a) * (static_cast<double>(j) / samples);
        if (in_collision(world, q, p.radius)) {
          throw std::runtime_error("scene " + s.name + ": pedestrian " + std::to_string(i) + " path hits static geometry");
        }
      }
    }
  }
}
}  // namespace detail

/// Scene JSON schema:
///   name, bounds [xmin, ymin, xmax, ymax], wall_height,
///   walls:  [{a:[x,y], b:[x,y], height?, class?}]
///   blocks: [{min:[x,y], max:[x,y]}]       solid rectangles, expanded to 4 walls
///   obstacles: [{shape:"box"|"cylinder", center, size:[sx,sy] | radius, height, class}]
///   pedestrians: [{path:[[x,y],...], speed, radius?, height?, loop?}]
///   graph: {nodes:[[x,y],...], edges:[[i,j],...]}
///   routes: [{name, nodes:[...], time_limit?, pedestrians?:[...]}]
/// The outer bounds are walled automatically.
inline Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.name = j.value("name", "scene");
  const auto& b = j.at("bounds");
  s.bounds_min = {b.at(0).get<double>(), b.at(1).get<double>()};
  s.bounds_max = {b.at(2).get<double>(), b.at(3).get<double>()};
  if (!(s.bounds_min.x < s.bounds_max.x && s.bounds_min.y < s.bounds_max.y)) {
    throw std::runtime_error("scene " + s.name + ": empty bounds");
  }
  s.wall_height = j.value("wall_height", 2.5);
  auto add_wall = [&](Vec2 a, Vec2 bb, double h, const std::string& cls) {
    Instance w;
    w.shape = ShapeKind::Segment;
    w.role = InstanceRole::Wall;
    w.a = a;
    w.b = bb;
    w.height = h;
    w.class_name = cls;
    s.walls.push_back(w);
  };
  const Vec2 lo = s.bounds_min, hi = s.bounds_max;
  if (j.value("enclose", true)) {
    add_wall(lo, {hi.x, lo.y}, s.wall_height, "wall");
    add_wall({hi.x, lo.y}, hi, s.wall_height, "wall");
    add_wall(hi, {lo.x, hi.y}, s.wall_height, "wall");
    add_wall({lo.x, hi.y}, lo, s.wall_height, "wall");
  }
  for (const auto& w : j.value("walls", nlohmann::json::array())) {
    add_wall(detail::vec2(w.at("a")), detail::vec2(w.at("b")), w.value("height", s.wall_height),
             w.value("class", "wall"));
  }
  for (const auto& bl : j.value("blocks", nlohmann::json::array())) {
    const Vec2 a = detail::vec2(bl.at("min")), c = detail::vec2(bl.at("max"));
    const double h = bl.value("height", s.wall_height);
    const std::string cls = bl.value("class", "wall");
    add_wall(a, {c.x, a.y}, h, cls);
    add_wall({c.x, a.y}, c, h, cls);
    add_wall(c, {a.x, c.y}, h, cls);
    add_wall({a.x, c.y}, a, h, cls);
  }
  for (const auto& o : j.value("obstacles", nlohmann::json::array())) {
    Obstacle ob;
    const std::string shape = o.value("shape", "box");
    ob.center = detail::vec2(o.at("center"));
    ob.height = o.value("height", 1.0);
    ob.class_name = o.value("class", "box");
    if (shape == "box") {
      ob.shape = ShapeKind::Box;
      const Vec2 size = detail::vec2(o.at("size"));
      ob.half_size = size * 0.5;
    } else if (shape == "cylinder") {
      ob.shape = ShapeKind::Circle;
      ob.radius = o.at("radius").get<double>();
    } else {
      throw std::runtime_error("scene " + s.name + ": unknown obstacle shape " + shape);
    }
    s.obstacles.push_back(ob);
  }
  for (const auto& p : j.value("pedestrians", nlohmann::json::array())) {
    Pedestrian ped;
    for (const auto& q : p.at("path")) ped.path.push_back(detail::vec2(q));
    if (ped.path.empty()) throw std::runtime_error("scene " + s.name + ": pedestrian with empty path");
    ped.speed = p.value("speed", 0.5);
    ped.radius = p.value("radius", 0.25);
    ped.height = p.value("height", 1.7);
    ped.loop = p.value("loop", false);
    s.pedestrians.push_back(std::move(ped));
  }
  if (j.contains("graph")) {
    for (const auto& n : j.at("graph").at("nodes")) s.graph.nodes.push_back(detail::vec2(n));
    for (const auto& e : j.at("graph").at("edges")) s.graph.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  }
  for (const auto& r : j.value("routes", nlohmann::json::array())) {
    RouteSpec rs;
    rs.name = r.at("name").get<std::string>();
    rs.nodes = r.at("nodes").get<std::vector<int>>();
    rs.time_limit = r.value("time_limit", 100.0);
    rs.pedestrians = r.value("pedestrians", std::vector<int>{});
    s.routes.push_back(std::move(rs));
  }
  detail::check_scene(s);
  return s;
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("scene file " + path + ": " + e.what());
  }
  try {
    return scene_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("scene file " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Rendering

/// Planar depth plus the index (into the snapshot) of the instance seen at
/// each pixel, -1 for no return.
struct RenderResult {
  DepthImage depth;
  std::vector<int> instance;
};

/// Ray-cast a 2.5-D world through a pinhole camera at the robot pose. Depth
/// is distance along the optical axis; rays with no hit inside max_range
/// return 0.
inline RenderResult render(std::span<const Instance> world, const Pose& pose, const CameraIntrinsics& cam) {
  cam.validate();
  const double f = cam.focal();
  const double cx = 0.5 * cam.width, cy = 0.5 * cam.height;
  RenderResult out{DepthImage(cam.width, cam.height, kInvalidDepth),
                   std::vector<int>(static_cast<std::size_t>(cam.width) * cam.height, -1)};
  const Vec2 origin = pose.position(), fwd = pose.forward(), left = pose.left();

  struct Hit {
    double t_in, t_out;
    int index;
  };
  std::vector<Hit> hits;
  std::vector<double> slope(static_cast<std::size_t>(cam.height));
  for (int v = 0; v < cam.height; ++v) slope[static_cast<std::size_t>(v)] = (cy - (v + 0.5)) / f;

  for (int u = 0; u < cam.width; ++u) {
    const double lateral = (cx - (u + 0.5)) / f;
    const Vec2 dir = fwd + left * lateral;  // forward component is exactly 1
    hits.clear();
    for (int i = 0; i < static_cast<int>(world.size()); ++i) {
      if (auto h = world[static_cast<std::size_t>(i)].intersect(origin, dir)) hits.push_back({h->first, h->second, i});
    }
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
      return a.t_in < b.t_in || (a.t_in == b.t_in && a.index < b.index);
    });
    for (int v = 0; v < cam.height; ++v) {
      const double s = slope[static_cast<std::size_t>(v)];
      // A top-surface hit lies beyond t_in, so a later-entering instance can
      // still be nearer; stop only once entries pass the best hit.
      double best = std::numeric_limits<double>::infinity();
      int best_index = -1;
      for (const Hit& h : hits) {
        if (h.t_in > cam.max_range || h.t_in >= best) break;
        const double top = world[static_cast<std::size_t>(h.index)].height;
        const double z_in = cam.mount_height + h.t_in * s;
        double t = -1.0;
        if (z_in >= 0.0 && z_in <= top) {
          t = h.t_in;
        } else if (s < 0.0 && z_in > top) {
          const double t_top = (top - cam.mount_height) / s;
          if (t_top >= h.t_in && t_top <= h.t_out) t = t_top;
        }
        if (t >= 0.0 && t < best) {
          best = t;
          best_index = h.index;
        }
      }
      if (best_index >= 0 && best <= cam.max_range) {
        const auto idx = static_cast<std::size_t>(v) * cam.width + u;
        out.depth(u, v) = static_cast<float>(best);
        out.instance[idx] = best_index;
      }
    }
  }
  return out;
}

inline DepthImage render_depth(const Scene& scene, const RobotState& state, const CameraIntrinsics& cam,
                               double time = 0.0) {
  const auto world = scene.snapshot(time);
  return render(world, state.pose, cam).depth;
}

/// Tight boxes around the visible pixels of each detectable instance; objects
/// with fewer than min_pixels visible pixels are dropped.
inline std::vector<Detection> detections_from_render(const RenderResult& r, std::span<const Instance> world,
                                                     int min_pixels = 50,
                                                     const CategoryMap& categories = CategoryMap::defaults()) {
  const int w = r.depth.width(), h = r.depth.height();
  struct Acc {
    int count = 0;
    BBox box{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1};
  };
  std::vector<Acc> acc(world.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = r.instance[static_cast<std::size_t>(y) * w + x];
      if (id < 0 || !world[static_cast<std::size_t>(id)].detectable()) continue;
      Acc& a = acc[static_cast<std::size_t>(id)];
      ++a.count;
      a.box.x_min = std::min(a.box.x_min, x);
      a.box.y_min = std::min(a.box.y_min, y);
      a.box.x_max = std::max(a.box.x_max, x + 1);
      a.box.y_max = std::max(a.box.y_max, y + 1);
    }
  }
  std::vector<Detection> out;
  for (std::size_t i = 0; i < world.size(); ++i) {
    if (acc[i].count < min_pixels) continue;
    Detection d;
    d.class_name = world[i].class_name;
    d.category = categories.categorize(d.class_name);
    d.bbox = acc[i].box;
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<Detection> ground_truth_detections(const Scene& scene, const RobotState& state,
                                                      const CameraIntrinsics& cam, double time = 0.0,
                                                      int min_pixels = 50) {
  const auto world = scene.snapshot(time);
  return detections_from_render(render(world, state.pose, cam), world, min_pixels);
}

/// Per-pixel class index into `vocabulary` (0 = no return).
inline GrayImage class_label_image(const RenderResult& r, std::span<const Instance> world,
                                   const std::vector<std::string>& vocabulary) {
  GrayImage out(r.depth.width(), r.depth.height(), 0);
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const int id = r.instance[i];
    if (id < 0) continue;
    const auto& cls = world[static_cast<std::size_t>(id)].class_name;
    const auto it = std::find(vocabulary.begin(), vocabulary.end(), cls);
    if (it == vocabulary.end()) throw std::invalid_argument("class_label_image: class missing from vocabulary: " + cls);
    px[i] = static_cast<std::uint8_t>(it - vocabulary.begin());
  }
  return out;
}

}  // namespace vipnav
