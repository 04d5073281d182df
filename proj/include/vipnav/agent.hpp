#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "vipnav/network.hpp"
#include "vipnav/representation.hpp"
#include "vipnav/sim.hpp"

namespace vipnav {

/// When evaluation observations get the depth noise model.
enum class ObservationNoise { AsTrained, Always, Never };

inline ObservationNoise parse_observation_noise(const std::string& s) {
  if (s == "as-trained") return ObservationNoise::AsTrained;
  if (s == "always") return ObservationNoise::Always;
  if (s == "never") return ObservationNoise::Never;
  throw std::invalid_argument("observation noise must be as-trained, always or never");
}

/// Kind whose observations the policy actually sees.
inline ReprKind observed_kind(ReprKind trained, ObservationNoise mode) {
  const bool noisy = mode == ObservationNoise::AsTrained ? is_noisy(trained) : mode == ObservationNoise::Always;
  switch (trained) {
    case ReprKind::RGB:
    case ReprKind::RGBNoise: return noisy ? ReprKind::RGBNoise : ReprKind::RGB;
    case ReprKind::Depth:
    case ReprKind::DepthNoise: return noisy ? ReprKind::DepthNoise : ReprKind::Depth;
    case ReprKind::DepthDet:
    case ReprKind::DepthNoiseDet: return noisy ? ReprKind::DepthNoiseDet : ReprKind::DepthDet;
    default: return trained;
  }
}

struct AgentConfig {
  ReprKind kind = ReprKind::DepthNoiseDet;
  ObservationNoise noise_mode = ObservationNoise::AsTrained;
  NoiseParams noise;
  CategoryMap categories = CategoryMap::defaults();
  RobotLimits limits;
  std::uint64_t seed = 0;  // observation noise for frame f is keyed on (seed, f)
};

/// Closed-loop policy backed by a trained network.
template <class T>
Policy make_network_policy(std::shared_ptr<const NetworkParams<T>> params, const AgentConfig& cfg) {
  if (is_dual(cfg.kind) != params->spec.is_dual()) throw std::invalid_argument("agent: representation kind does not match the network");
  const ReprKind seen = observed_kind(cfg.kind, cfg.noise_mode);
  return [params, cfg, seen](const Observation& o) {
    const RawFrame f{o.depth, o.labels, o.vocabulary, o.detections};
    const RngStream rng = RngStream(cfg.seed, 0x0B5).substream(o.frame);
    const ReprBundle b =
        make_bundle(seen, f, cfg.categories, cfg.noise, rng, params->spec.input_width, params->spec.input_height);
    const Action a = predict(*params, to_input<T>(b, o.command));
    return denormalize(a, cfg.limits.v_max, cfg.limits.omega_max);
  };
}

}  // namespace vipnav
