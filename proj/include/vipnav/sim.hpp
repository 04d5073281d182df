#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vipnav/command.hpp"
#include "vipnav/metrics.hpp"
#include "vipnav/rng.hpp"
#include "vipnav/scene.hpp"

namespace vipnav {

struct ExpertConfig {
  double lookahead = 1.0;          // m along the route
  double steer_gain = 2.0;         // rad/s per rad of heading error
  double slowdown_distance = 2.0;  // m; full speed beyond this clearance
  double contact_distance = 0.3;   // m; frontal clearance where v reaches 0
  double switch_distance = 0.5;    // m; hand over to the next edge this close to a node
};

namespace detail {

inline double heading_of(Vec2 d) noexcept { return std::atan2(d.y, d.x); }

/// Exit from `node` (arriving from `prev`) that realizes `cmd`, or nullopt.
/// Forward is the straightest exit within 45 degrees; left/right the exit
/// closest to a 90 degree turn on that side.
inline std::optional<int> exit_for(const NavGraph& g, int prev, int node, DirectionCommand cmd) {
  const Vec2 at = g.nodes[static_cast<std::size_t>(node)];
  const double in_heading = heading_of(at - g.nodes[static_cast<std::size_t>(prev)]);
  constexpr double kQuarter = std::numbers::pi / 4.0, kHalf = std::numbers::pi / 2.0;
  std::optional<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int nb : g.neighbours(node)) {
    if (nb == prev) continue;
    const double turn = wrap_angle(heading_of(g.nodes[static_cast<std::size_t>(nb)] - at) - in_heading);
    double cost = std::numeric_limits<double>::infinity();
    switch (cmd) {
      case DirectionCommand::MoveForward:
      case DirectionCommand::Stop:
        if (std::abs(turn) <= kQuarter) cost = std::abs(turn);
        break;
      case DirectionCommand::TurnLeft:
        if (turn > kQuarter) cost = std::abs(turn - kHalf);
        break;
      case DirectionCommand::TurnRight:
        if (turn < -kQuarter) cost = std::abs(turn + kHalf);
        break;
    }
    if (cost < best_cost) {
      best_cost = cost;
      best = nb;
    }
  }
  return best;
}

}  // namespace detail

/// Commands that have a matching exit at `node` when arriving from `prev`.
inline std::vector<DirectionCommand> legal_commands(const NavGraph& g, int prev, int node) {
  std::vector<DirectionCommand> out;
  for (auto c : {DirectionCommand::MoveForward, DirectionCommand::TurnLeft, DirectionCommand::TurnRight}) {
    if (detail::exit_for(g, prev, node, c)) out.push_back(c);
  }
  return out;
}

/// Exit taken for `cmd`: the matching exit, else straight on, else the
/// gentlest turn, else back the way we came.
inline int choose_exit(const NavGraph& g, int prev, int node, DirectionCommand cmd) {
  if (auto e = detail::exit_for(g, prev, node, cmd)) return *e;
  if (auto e = detail::exit_for(g, prev, node, DirectionCommand::MoveForward)) return *e;
  const Vec2 at = g.nodes[static_cast<std::size_t>(node)];
  const double in_heading = detail::heading_of(at - g.nodes[static_cast<std::size_t>(prev)]);
  int best = prev;
  double best_turn = std::numeric_limits<double>::infinity();
  for (int nb : g.neighbours(node)) {
    if (nb == prev) continue;
    const double turn = std::abs(wrap_angle(detail::heading_of(g.nodes[static_cast<std::size_t>(nb)] - at) - in_heading));
    if (turn < best_turn) {
      best_turn = turn;
      best = nb;
    }
  }
  return best;
}

/// Tracks which graph edge the robot is driving along.
class Navigator {
 public:
  Navigator(const NavGraph& graph, const Pose& pose) : graph_(&graph) { localize(pose); }

  /// Nearest edge, oriented to agree with the heading. Ties prefer the edge
  /// whose target is closest, so a robot sitting on a node still has to pick
  /// an exit there.
  void localize(const Pose& pose) {
    if (graph_->edges.empty()) throw std::invalid_argument("navigator: scene has no graph");
    const Vec2 p = pose.position();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [a, b] : graph_->edges) {
      for (int dir = 0; dir < 2; ++dir) {
        const int from = dir == 0 ? a : b, to = dir == 0 ? b : a;
        Instance seg;
        seg.a = node(from);
        seg.b = node(to);
        const double misalign = 1.0 - std::cos(wrap_angle(detail::heading_of(seg.b - seg.a) - pose.heading));
        const double score = seg.distance(p) + 0.5 * misalign + 1e-3 * (seg.b - p).norm();
        if (score < best) {
          best = score;
          prev_ = from;
          target_ = to;
        }
      }
    }
  }

  /// Hands over to the next edge once the target node is (nearly) reached.
  void update(const Pose& pose, DirectionCommand cmd, double switch_distance = 0.5) {
    for (int guard = 0; guard < 4; ++guard) {
      const Vec2 a = node(prev_), b = node(target_), p = pose.position();
      const double len = (b - a).norm();
      const double s = len > 0.0 ? (p - a).dot(b - a) / len : 0.0;
      if (s < len - switch_distance && (p - b).norm() >= switch_distance) return;
      const int next = choose_exit(*graph_, prev_, target_, cmd);
      prev_ = target_;
      target_ = next;
    }
  }

  /// Point `distance` metres ahead of the robot's projection on the route,
  /// spilling onto the exit chosen for `cmd`.
  [[nodiscard]] Vec2 lookahead(const Pose& pose, DirectionCommand cmd, double distance) const {
    const Vec2 a = node(prev_), b = node(target_);
    const double len = (b - a).norm();
    if (len <= 0.0) return b;
    const Vec2 u = (b - a) * (1.0 / len);
    const double s = std::clamp((pose.position() - a).dot(u), 0.0, len);
    if (s + distance <= len) return a + u * (s + distance);
    const int next = choose_exit(*graph_, prev_, target_, cmd);
    const Vec2 c = node(next);
    const double len2 = (c - b).norm();
    if (len2 <= 0.0) return b;
    return b + (c - b) * (std::min(s + distance - len, len2) / len2);
  }

  [[nodiscard]] int previous() const noexcept { return prev_; }
  [[nodiscard]] int target() const noexcept { return target_; }

 private:
  [[nodiscard]] Vec2 node(int i) const { return graph_->nodes[static_cast<std::size_t>(i)]; }

  const NavGraph* graph_;
  int prev_ = 0;
  int target_ = 0;
};

/// Free space ahead of the robot body: a fan of parallel rays spanning the
/// robot width, measured from the front of the body.
inline double frontal_clearance(std::span<const Instance> world, const Pose& pose, double radius) {
  const Vec2 fwd = pose.forward(), left = pose.left(), p = pose.position();
  double best = std::numeric_limits<double>::infinity();
  constexpr int kRays = 5;
  const double half = radius + 0.05;
  for (int i = 0; i < kRays; ++i) {
    const double off = -half + 2.0 * half * i / (kRays - 1);
    const Vec2 origin = p + left * off;
    const double body = std::sqrt(std::max(0.0, radius * radius - off * off));
    for (const Instance& in : world) {
      if (auto h = in.intersect(origin, fwd)) best = std::min(best, h->first - body);
    }
  }
  return best;
}

/// Clearance to pedestrians that are not behind the robot.
inline double pedestrian_clearance(std::span<const Instance> world, const Pose& pose, double radius) {
  const Vec2 fwd = pose.forward(), p = pose.position();
  double best = std::numeric_limits<double>::infinity();
  for (const Instance& in : world) {
    if (in.role != InstanceRole::Pedestrian) continue;
    if ((in.center - p).dot(fwd) < -in.radius) continue;
    best = std::min(best, in.distance(p) - radius);
  }
  return best;
}

/// Scripted expert. Pure pursuit on the lookahead point, detouring to the
/// nearest free heading when that direction is blocked; speed drops with
/// heading error and scales down linearly below slowdown_distance of
/// clearance, reaching 0 at contact_distance (frontal) or at contact
/// (pedestrians).
inline Twist expert_action(const Navigator& nav, std::span<const Instance> world, const Pose& pose,
                           DirectionCommand cmd, const RobotLimits& limits, const ExpertConfig& cfg = {}) {
  if (cmd == DirectionCommand::Stop) return {0.0, 0.0};
  const Vec2 target = nav.lookahead(pose, cmd, cfg.lookahead);
  const Vec2 to = target - pose.position();
  double desired = to.norm() > 1e-9 ? detail::heading_of(to) : pose.heading;
  // When the pursuit heading is blocked, turn to the nearest free heading.
  const double free_clearance = cfg.contact_distance + 0.1;
  // Body check: a short step must not bring the hull closer to geometry that
  // is already near, which the frontal fan misses at the robot's sides.
  const double body_now = clearance(world, pose.position(), limits.radius);
  auto body_blocked = [&](double h) {
    const Vec2 dir{std::cos(h), std::sin(h)};
    double c = std::numeric_limits<double>::infinity();
    for (double step : {0.02, 0.04, 0.06, 0.08, 0.1}) {
      c = std::min(c, clearance(world, pose.position() + dir * step, limits.radius));
    }
    return c < 0.05 && c < body_now;
  };
  auto blocked = [&](double h) {
    return frontal_clearance(world, {pose.x, pose.y, h}, limits.radius) < free_clearance || body_blocked(h);
  };
  if (blocked(desired)) {
    // Aim one step past the first free heading: the steering loop closes in
    // on its target asymptotically and would otherwise stall at the edge.
    constexpr double kStep = std::numbers::pi / 36.0;
    for (int k = 1; k <= 36; ++k) {
      if (!blocked(desired + k * kStep)) {
        desired += (k + 1) * kStep;
        break;
      }
      if (!blocked(desired - k * kStep)) {
        desired -= (k + 1) * kStep;
        break;
      }
    }
  }
  const double err = wrap_angle(desired - pose.heading);
  const double omega = std::clamp(cfg.steer_gain * err, -limits.omega_max, limits.omega_max);
  const double align = std::clamp((std::cos(err) - 0.5) / 0.5, 0.0, 1.0);
  const double front = frontal_clearance(world, pose, limits.radius);
  const double ped = pedestrian_clearance(world, pose, limits.radius);
  const double front_scale =
      std::clamp((front - cfg.contact_distance) / (cfg.slowdown_distance - cfg.contact_distance), 0.0, 1.0);
  const double ped_scale = std::clamp(ped / cfg.slowdown_distance, 0.0, 1.0);
  const double v = body_blocked(pose.heading) ? 0.0 : limits.v_max * align * std::min(front_scale, ped_scale);
  return {std::clamp(v, 0.0, limits.v_max), omega};
}

/// Stateless form: localizes on the graph from scratch at the scene time.
inline Twist expert_policy(const Scene& scene, const RobotState& state, DirectionCommand cmd,
                           const RobotLimits& limits = {}, double time = 0.0, const ExpertConfig& cfg = {}) {
  Navigator nav(scene.graph, state.pose);
  nav.update(state.pose, cmd, cfg.switch_distance);
  const auto world = scene.snapshot(time);
  return expert_action(nav, world, state.pose, cmd, limits, cfg);
}

/// Unicycle Euler step.
inline Pose integrate(const Pose& p, const Twist& t, double dt) noexcept {
  return {p.x + t.v * std::cos(p.heading) * dt, p.y + t.v * std::sin(p.heading) * dt,
          wrap_angle(p.heading + t.omega * dt)};
}

// ---------------------------------------------------------------------------
// Expert episodes

struct EpisodeConfig {
  int max_steps = 300;
  double dt = 0.1;
  double recovery_fraction = 0.2;
  double recovery_distance = 0.1;   // m of clearance at a recovery start
  double start_lateral = 0.3;       // m off the centreline at normal starts
  double start_heading = 0.3;       // rad of heading noise at normal starts
  double stop_probability = 0.01;   // per step, while moving forward
  int stop_min_steps = 10;
  int stop_max_steps = 20;
  double intersection_radius = 1.5; // m; a command is held this close to an intersection
  int min_detection_pixels = 50;
  CameraIntrinsics camera;
  RobotLimits limits;
  ExpertConfig expert;
  CategoryMap categories = CategoryMap::defaults();
  bool keep_images = true;

  void validate() const {
    if (!(recovery_fraction >= 0.0 && recovery_fraction <= 1.0)) {
      throw std::invalid_argument("episode: recovery_fraction must be in [0, 1]");
    }
    if (max_steps <= 0 || !(dt > 0.0)) throw std::invalid_argument("episode: max_steps and dt must be positive");
    if (stop_min_steps < 0 || stop_max_steps < stop_min_steps) throw std::invalid_argument("episode: bad stop range");
    camera.validate();
  }
};

struct EpisodeRecord {
  int episode = 0;
  int step = 0;
  double time = 0.0;             // s since episode start
  double pedestrian_time = 0.0;  // scene clock used for pedestrians
  Pose pose;
  DirectionCommand command = DirectionCommand::MoveForward;
  Action action;                 // normalized expert action
  std::vector<Detection> detections;
  std::string scene;
  std::uint64_t seed = 0;
  bool truncated = false;
  bool recovery = false;
  std::string depth_path;
  std::string labels_path;
  std::optional<DepthImage> depth;
  std::optional<GrayImage> labels;  // class index per pixel into the manifest vocabulary
};

struct Episode {
  std::vector<EpisodeRecord> records;
  Pose start;
  double start_clearance = 0.0;
  bool recovery = false;
  bool truncated = false;
};

/// Systematic selection: exactly round(n * fraction) of any n consecutive
/// episodes (up to one) are recovery starts, with a seeded phase.
inline bool is_recovery_episode(const RngStream& master, int index, double fraction) {
  const double phase = master.substream(0x5EC0).uniform();
  const double a = std::floor(index * fraction + phase), b = std::floor((index + 1) * fraction + phase);
  return b > a;
}

namespace detail {

/// Point on an instance's boundary and the outward normal there.
inline std::pair<Vec2, Vec2> boundary_sample(const Instance& in, RngStream& rng) {
  switch (in.shape) {
    case ShapeKind::Segment: {
      const Vec2 d = in.b - in.a;
      const Vec2 p = in.a + d * rng.uniform();
      const double len = d.norm();
      Vec2 n{-d.y / len, d.x / len};
      if (rng.bernoulli(0.5)) n = n * -1.0;
      return {p, n};
    }
    case ShapeKind::Box: {
      const double wx = in.b.x - in.a.x, wy = in.b.y - in.a.y;
      double s = rng.uniform(0.0, 2.0 * (wx + wy));
      if (s < wx) return {{in.a.x + s, in.a.y}, {0, -1}};
      s -= wx;
      if (s < wy) return {{in.b.x, in.a.y + s}, {1, 0}};
      s -= wy;
      if (s < wx) return {{in.b.x - s, in.b.y}, {0, 1}};
      s -= wx;
      return {{in.a.x, in.b.y - s}, {-1, 0}};
    }
    case ShapeKind::Circle: {
      const double a = rng.uniform(-std::numbers::pi, std::numbers::pi);
      const Vec2 n{std::cos(a), std::sin(a)};
      return {in.center + n * in.radius, n};
    }
  }
  return {in.a, {1, 0}};
}

inline bool inside_bounds(const Scene& s, Vec2 p) {
  return p.x > s.bounds_min.x && p.x < s.bounds_max.x && p.y > s.bounds_min.y && p.y < s.bounds_max.y;
}

/// Distance from p to the nearest pedestrian's walking line.
inline double pedestrian_lane_distance(const Scene& s, Vec2 p) {
  double best = std::numeric_limits<double>::infinity();
  for (const Pedestrian& ped : s.pedestrians) {
    const std::size_t n = ped.path.size();
    const std::size_t segs = n == 1 ? 1 : (ped.loop ? n : n - 1);
    for (std::size_t k = 0; k < segs; ++k) {
      Instance seg;
      seg.a = ped.path[k];
      seg.b = ped.path[(k + 1) % n];
      best = std::min(best, seg.distance(p) - ped.radius);
    }
  }
  return best;
}

inline Vec2 nearest_graph_point(const Scene& s, Vec2 p) {
  double best = std::numeric_limits<double>::infinity();
  Vec2 q = p;
  for (const auto& [a, b] : s.graph.edges) {
    const Vec2 na = s.graph.nodes[static_cast<std::size_t>(a)], nb = s.graph.nodes[static_cast<std::size_t>(b)];
    const Vec2 d = nb - na;
    const double len2 = d.dot(d);
    const double t = len2 > 0.0 ? std::clamp((p - na).dot(d) / len2, 0.0, 1.0) : 0.0;
    const Vec2 c = na + d * t;
    if ((c - p).norm() < best) {
      best = (c - p).norm();
      q = c;
    }
  }
  return q;
}

/// True when the straight path from p to the nearest point of the route
/// graph crosses no static geometry. Rules out points inside solid blocks.
inline bool sees_graph(const Scene& s, std::span<const Instance* const> statics, Vec2 p) {
  const Vec2 q = nearest_graph_point(s, p);
  if ((q - p).norm() < 1e-9) return true;
  for (const Instance* in : statics) {
    if (auto h = in->intersect(p, q - p); h && h->first < 1.0) return false;
  }
  return true;
}

/// True when the way from p back to the route graph keeps `margin` of free
/// space to every pedestrian's walking line.
inline bool clear_of_lanes(const Scene& s, Vec2 p, double margin) {
  const Vec2 q = nearest_graph_point(s, p);
  const int samples = std::max(1, static_cast<int>((q - p).norm() / 0.05));
  for (int i = 0; i <= samples; ++i) {
    if (pedestrian_lane_distance(s, p + (q - p) * (static_cast<double>(i) / samples)) < margin) return false;
  }
  return true;
}

}  // namespace detail

/// Collision-free start near the route graph. Recovery starts sit within
/// recovery_distance of static geometry, facing it; normal starts lie near
/// an edge centreline, roughly aligned with it. Starts whose way back to the
/// centreline crosses a pedestrian's walking line are rejected, since
/// pedestrians do not swerve.
inline Pose sample_start(const Scene& scene, const EpisodeConfig& cfg, bool recovery, double ped_time,
                         RngStream& rng) {
  const auto world = scene.snapshot(ped_time);
  const double r = cfg.limits.radius;
  std::vector<const Instance*> statics;
  for (const Instance& in : world) {
    if (in.role != InstanceRole::Pedestrian) statics.push_back(&in);
  }
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Pose pose;
    if (recovery) {
      const Instance& in = *statics[rng.below(statics.size())];
      const auto [on, normal] = detail::boundary_sample(in, rng);
      const Vec2 p = on + normal * (r + rng.uniform(0.0, cfg.recovery_distance));
      pose = {p.x, p.y, wrap_angle(detail::heading_of(normal * -1.0) + rng.uniform(-std::numbers::pi / 3, std::numbers::pi / 3))};
      if (!detail::inside_bounds(scene, p) || scene.graph.distance_to_edges(p) > 1.7) continue;
      if (!detail::sees_graph(scene, statics, p)) continue;
      const double c = clearance(world, p, r);
      if (c < 0.0 || c > cfg.recovery_distance) continue;
    } else {
      const auto& [a, b] = scene.graph.edges[rng.below(scene.graph.edges.size())];
      Vec2 from = scene.graph.nodes[static_cast<std::size_t>(a)], to = scene.graph.nodes[static_cast<std::size_t>(b)];
      if (rng.bernoulli(0.5)) std::swap(from, to);
      const Vec2 d = to - from;
      const double len = d.norm();
      const Vec2 u = d * (1.0 / len), n{-u.y, u.x};
      const Vec2 p = from + u * (len * rng.uniform(0.1, 0.9)) + n * rng.uniform(-cfg.start_lateral, cfg.start_lateral);
      pose = {p.x, p.y, wrap_angle(detail::heading_of(d) + rng.uniform(-cfg.start_heading, cfg.start_heading))};
      if (!detail::inside_bounds(scene, p) || clearance(world, p, r) < 0.15) continue;
    }
    if (!detail::clear_of_lanes(scene, pose.position(), r + 0.1)) continue;
    return pose;
  }
  throw std::runtime_error("scene " + scene.name + ": could not sample a start pose");
}

/// Rolls the expert out from a sampled start. Records start at the first
/// step, so a recovery episode contains only the recovery, never the
/// actions that led into the bad state. A collision or a stall ends the
/// episode early and flags it truncated.
inline Episode generate_episode(const Scene& scene, const EpisodeConfig& cfg, const RngStream& master, int index) {
  cfg.validate();
  RngStream rng = master.substream(static_cast<std::uint64_t>(index) + 1);
  Episode ep;
  ep.recovery = is_recovery_episode(master, index, cfg.recovery_fraction);
  const double t0 = rng.uniform(0.0, 1000.0);
  RngStream start_rng = rng.substream(1);
  RngStream cmd_rng = rng.substream(2);
  ep.start = sample_start(scene, cfg, ep.recovery, t0, start_rng);
  ep.start_clearance = clearance(scene.snapshot(t0), ep.start.position(), cfg.limits.radius);

  const auto vocabulary = scene.class_vocabulary();
  Navigator nav(scene.graph, ep.start);
  Pose pose = ep.start;
  DirectionCommand held = DirectionCommand::MoveForward;
  int held_node = -1;
  int stop_left = 0;
  std::vector<Vec2> trail{pose.position()};
  const int window = static_cast<int>(std::lround(kStuckWindow / cfg.dt));

  for (int step = 0; step < cfg.max_steps; ++step) {
    const double t = step * cfg.dt;
    const double ped_t = t0 + t;
    const auto world = scene.snapshot(ped_t);

    nav.update(pose, held == DirectionCommand::Stop ? DirectionCommand::MoveForward : held, cfg.expert.switch_distance);
    // Intersection commands: drawn once per approach, held until the robot
    // leaves the node's neighbourhood.
    DirectionCommand route_cmd = DirectionCommand::MoveForward;
    const int tgt = nav.target(), prv = nav.previous();
    const Vec2 p = pose.position();
    auto near = [&](int n) { return (scene.graph.nodes[static_cast<std::size_t>(n)] - p).norm() < cfg.intersection_radius; };
    if (held_node >= 0 && (held_node == tgt || (held_node == prv && near(held_node)))) {
      route_cmd = held;
    } else if (scene.graph.is_intersection(tgt) && near(tgt)) {
      const auto legal = legal_commands(scene.graph, prv, tgt);
      if (!legal.empty()) {
        held_node = tgt;
        held = legal[cmd_rng.below(legal.size())];
        route_cmd = held;
      }
    } else {
      held_node = -1;
      held = DirectionCommand::MoveForward;
    }
    DirectionCommand cmd = route_cmd;
    if (stop_left > 0) {
      cmd = DirectionCommand::Stop;
      --stop_left;
    } else if (route_cmd == DirectionCommand::MoveForward && held_node < 0 && cmd_rng.bernoulli(cfg.stop_probability)) {
      stop_left = static_cast<int>(cmd_rng.below(static_cast<std::uint64_t>(cfg.stop_max_steps - cfg.stop_min_steps + 1))) +
                  cfg.stop_min_steps - 1;
      cmd = DirectionCommand::Stop;
    }
    if (cmd != DirectionCommand::Stop) nav.update(pose, cmd, cfg.expert.switch_distance);

    const Twist twist = expert_action(nav, world, pose, cmd, cfg.limits, cfg.expert);

    EpisodeRecord rec;
    rec.episode = index;
    rec.step = step;
    rec.time = t;
    rec.pedestrian_time = ped_t;
    rec.pose = pose;
    rec.command = cmd;
    rec.action = normalize(twist, cfg.limits.v_max, cfg.limits.omega_max);
    rec.scene = scene.name;
    rec.seed = master.seed();
    rec.recovery = ep.recovery;
    const RenderResult rr = render(world, pose, cfg.camera);
    rec.detections = detections_from_render(rr, world, cfg.min_detection_pixels, cfg.categories);
    if (cfg.keep_images) {
      rec.depth = rr.depth;
      rec.labels = class_label_image(rr, world, vocabulary);
    }
    ep.records.push_back(std::move(rec));

    pose = integrate(pose, twist, cfg.dt);
    trail.push_back(pose.position());
    const auto next_world = scene.snapshot(ped_t + cfg.dt);
    bool bad = in_collision(next_world, pose.position(), cfg.limits.radius);
    if (!bad && static_cast<int>(trail.size()) > window) {
      const Vec2 old = trail[trail.size() - 1 - static_cast<std::size_t>(window)];
      bool stopped = false;
      for (int k = 0; k < window; ++k) {
        stopped |= ep.records[ep.records.size() - 1 - static_cast<std::size_t>(k)].command == DirectionCommand::Stop;
      }
      bad = !stopped && (pose.position() - old).norm() < kStuckDisplacement;
    }
    if (bad) {
      ep.truncated = true;
      break;
    }
  }
  for (auto& r : ep.records) r.truncated = ep.truncated;
  return ep;
}

// ---------------------------------------------------------------------------
// Closed-loop evaluation

/// What a policy sees at one control step. `world` is ground truth and is
/// only meant for the scripted expert.
struct Observation {
  const DepthImage& depth;
  const GrayImage& labels;
  const std::vector<std::string>& vocabulary;
  const std::vector<Detection>& detections;
  DirectionCommand command;
  const Pose& pose;
  double time;
  std::uint64_t frame;
  bool reset;
  std::span<const Instance> world;
};

using Policy = std::function<Twist(const Observation&)>;

struct EvalConfig {
  double dt = 0.1;
  double intersection_radius = 1.5;
  double goal_radius = 0.6;
  double reset_backoff = 0.5;
  int min_detection_pixels = 50;
  std::optional<double> time_limit;  // overrides the route's limit
  CameraIntrinsics camera;
  RobotLimits limits;
  CategoryMap categories = CategoryMap::defaults();
};

/// Direction command to give at each intersection along a node route.
inline std::vector<std::pair<int, DirectionCommand>> route_commands(const Scene& scene, const RouteSpec& route) {
  std::vector<std::pair<int, DirectionCommand>> out;
  const auto& g = scene.graph;
  for (std::size_t i = 1; i + 1 < route.nodes.size(); ++i) {
    const int prev = route.nodes[i - 1], node = route.nodes[i], next = route.nodes[i + 1];
    if (!g.is_intersection(node)) continue;
    DirectionCommand cmd = DirectionCommand::MoveForward;
    bool found = false;
    for (auto c : {DirectionCommand::MoveForward, DirectionCommand::TurnLeft, DirectionCommand::TurnRight}) {
      if (detail::exit_for(g, prev, node, c) == next) {
        cmd = c;
        found = true;
        break;
      }
    }
    if (!found) throw std::invalid_argument("route " + route.name + ": no command reaches node " + std::to_string(next));
    out.emplace_back(node, cmd);
  }
  return out;
}

namespace detail {
/// Pose `distance` metres back along the driven path; trims the path.
inline Pose back_off(std::vector<Pose>& path, double distance) {
  double acc = 0.0;
  while (path.size() > 1) {
    const double seg = (path.back().position() - path[path.size() - 2].position()).norm();
    if (acc + seg >= distance) break;
    acc += seg;
    path.pop_back();
  }
  if (path.size() > 1) path.pop_back();
  return path.back();
}
}  // namespace detail

/// Closed-loop rollout of `policy` along `route`. Interventions are
/// collisions and stalls (under kStuckDisplacement over kStuckWindow); after
/// one the robot is put back reset_backoff metres along its path.
inline EvalLog evaluate(const Policy& policy, const Scene& scene, const RouteSpec& route, const EvalConfig& cfg,
                        const RngStream& rng, const std::string& model = "") {
  cfg.camera.validate();
  const Scene s = scene.with_pedestrians(route.pedestrians);
  const auto plan = route_commands(s, route);
  const auto vocabulary = s.class_vocabulary();
  const auto& nodes = s.graph.nodes;
  const Vec2 n0 = nodes[static_cast<std::size_t>(route.nodes[0])], n1 = nodes[static_cast<std::size_t>(route.nodes[1])];
  const Vec2 goal = nodes[static_cast<std::size_t>(route.nodes.back())];
  Pose pose{n0.x, n0.y, detail::heading_of(n1 - n0)};
  RngStream r = rng.substream(0xE7A1);
  const double t0 = r.uniform(0.0, 1000.0);
  const double limit = cfg.time_limit.value_or(route.time_limit);
  const int max_steps = static_cast<int>(std::lround(limit / cfg.dt));
  const int window = static_cast<int>(std::lround(kStuckWindow / cfg.dt));

  EvalLog log;
  log.model = model;
  log.scene = s.name;
  log.route = route.name;
  log.seed = rng.seed();
  std::size_t k = 0;
  bool inside = false;
  bool reset = true;
  std::vector<Pose> path{pose};
  std::vector<Vec2> since_reset{pose.position()};
  const double half_fov = 0.5 * cfg.camera.hfov;

  for (int step = 0; step < max_steps; ++step) {
    const double t = step * cfg.dt;
    const auto world = s.snapshot(t0 + t);
    DirectionCommand cmd = DirectionCommand::MoveForward;
    if (k < plan.size()) {
      const double d = (nodes[static_cast<std::size_t>(plan[k].first)] - pose.position()).norm();
      if (d < cfg.intersection_radius) {
        inside = true;
        cmd = plan[k].second;
      } else if (inside) {
        inside = false;
        ++k;
      }
    }
    const RenderResult rr = render(world, pose, cfg.camera);
    const auto dets = detections_from_render(rr, world, cfg.min_detection_pixels, cfg.categories);
    const GrayImage labels = class_label_image(rr, world, vocabulary);
    const Observation obs{rr.depth, labels, vocabulary, dets, cmd, pose, t, static_cast<std::uint64_t>(step), reset, world};
    Twist tw = policy(obs);
    reset = false;
    tw.v = std::clamp(std::isfinite(tw.v) ? tw.v : 0.0, 0.0, cfg.limits.v_max);
    tw.omega = std::clamp(std::isfinite(tw.omega) ? tw.omega : 0.0, -cfg.limits.omega_max, cfg.limits.omega_max);

    EvalStep st;
    st.time = t;
    st.pose = pose;
    st.v = tw.v;
    st.omega = tw.omega;
    st.command = cmd;
    for (const Instance& in : world) {
      if (in.role != InstanceRole::Pedestrian) continue;
      const Vec2 rel = in.center - pose.position();
      const double d = rel.norm();
      if (!st.pedestrian_distance || d < *st.pedestrian_distance) {
        st.pedestrian_distance = d;
        st.pedestrian_in_fov = std::abs(wrap_angle(detail::heading_of(rel) - pose.heading)) <= half_fov;
      }
    }

    pose = integrate(pose, tw, cfg.dt);
    path.push_back(pose);
    since_reset.push_back(pose.position());
    st.collision = in_collision(s.snapshot(t0 + t + cfg.dt), pose.position(), cfg.limits.radius);
    if (!st.collision && static_cast<int>(since_reset.size()) > window) {
      const Vec2 old = since_reset[since_reset.size() - 1 - static_cast<std::size_t>(window)];
      st.stuck = (pose.position() - old).norm() < kStuckDisplacement;
    }
    log.steps.push_back(st);
    if (st.intervention()) {
      pose = detail::back_off(path, cfg.reset_backoff);
      since_reset.assign(1, pose.position());
      reset = true;
      continue;
    }
    if ((pose.position() - goal).norm() < cfg.goal_radius && k >= plan.size()) {
      log.completed = true;
      log.route_time = t + cfg.dt;
      break;
    }
  }
  if (!log.completed) log.route_time = limit;
  return log;
}

/// The scripted expert as a closed-loop policy. Keeps its own graph
/// localization, redone after every reset.
inline Policy make_expert_policy(const Scene& scene, const RobotLimits& limits = {}, const ExpertConfig& cfg = {}) {
  auto nav = std::make_shared<std::optional<Navigator>>();
  const NavGraph* graph = &scene.graph;
  return [nav, graph, limits, cfg](const Observation& o) {
    if (!*nav || o.reset) nav->emplace(*graph, o.pose);
    const DirectionCommand steer = o.command == DirectionCommand::Stop ? DirectionCommand::MoveForward : o.command;
    (*nav)->update(o.pose, steer, cfg.switch_distance);
    return expert_action(**nav, o.world, o.pose, o.command, limits, cfg);
  };
}

}  // namespace vipnav
