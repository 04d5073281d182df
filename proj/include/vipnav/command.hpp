#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string_view>

namespace vipnav {

enum class DirectionCommand { MoveForward, TurnLeft, TurnRight, Stop };

constexpr std::string_view to_string(DirectionCommand c) noexcept {
  switch (c) {
    case DirectionCommand::MoveForward: return "forward";
    case DirectionCommand::TurnLeft: return "left";
    case DirectionCommand::TurnRight: return "right";
    case DirectionCommand::Stop: return "stop";
  }
  return "?";
}

inline std::optional<DirectionCommand> parse_command(std::string_view s) noexcept {
  for (auto c : {DirectionCommand::MoveForward, DirectionCommand::TurnLeft, DirectionCommand::TurnRight,
                 DirectionCommand::Stop}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

template <class T = float>
constexpr std::array<T, 4> one_hot(DirectionCommand c) noexcept {
  std::array<T, 4> v{};
  v[static_cast<std::size_t>(c)] = T(1);
  return v;
}

/// Velocity command in physical units (m/s, rad/s).
struct Twist {
  double v = 0.0;
  double omega = 0.0;
  bool operator==(const Twist&) const = default;
};

/// Network-space action: v in [0, 1], omega in [-1, 1] after clamping.
struct Action {
  double v = 0.0;
  double omega = 0.0;
  bool operator==(const Action&) const = default;

  [[nodiscard]] Action clamped() const noexcept {
    return {std::clamp(v, 0.0, 1.0), std::clamp(omega, -1.0, 1.0)};
  }
};

inline Action normalize(const Twist& t, double v_max, double omega_max) noexcept {
  return Action{t.v / v_max, t.omega / omega_max}.clamped();
}
inline Twist denormalize(const Action& a, double v_max, double omega_max) noexcept {
  const Action c = a.clamped();
  return {c.v * v_max, c.omega * omega_max};
}

}  // namespace vipnav
