#pragma once

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <span>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vipnav/network.hpp"
#include "vipnav/rng.hpp"

namespace vipnav {

/// Worker count from VIPNAV_WORKERS (default 1).
inline int worker_count_from_env() {
  if (const char* s = std::getenv("VIPNAV_WORKERS")) {
    const int n = std::atoi(s);
    if (n > 0) return n;
  }
  return 1;
}

/// Random-access training data. `fetch` may fill `scratch` and return it, or
/// return a reference to stored input; it must be safe to call concurrently.
template <class T>
struct TrainingData {
  std::size_t size = 0;
  std::function<const NetInput<T>&(std::size_t, NetInput<T>& scratch)> fetch;
  std::function<Action(std::size_t)> target;

  static TrainingData from_vectors(const std::vector<NetInput<T>>& inputs, const std::vector<Action>& targets) {
    if (inputs.size() != targets.size()) throw std::invalid_argument("training data: input/target count mismatch");
    TrainingData d;
    d.size = inputs.size();
    d.fetch = [&inputs](std::size_t i, NetInput<T>&) -> const NetInput<T>& { return inputs[i]; };
    d.target = [&targets](std::size_t i) { return targets[i]; };
    return d;
  }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update with bias correction.
template <class T>
void adam_step(NetworkParams<T>& p, const std::vector<T>& grad, const AdamConfig& cfg) {
  const std::size_t n = p.values.size();
  if (grad.size() != n) throw std::invalid_argument("adam_step: gradient size mismatch");
  if (p.adam.m.size() != n) {
    p.adam.m.assign(n, T(0));
    p.adam.v.assign(n, T(0));
  }
  ++p.adam.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.adam.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.adam.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    p.adam.m[i] = b1 * p.adam.m[i] + (T(1) - b1) * g;
    p.adam.v[i] = b2 * p.adam.v[i] + (T(1) - b2) * g * g;
    p.values[i] -= step * p.adam.m[i] / (std::sqrt(p.adam.v[i] * inv_bc2) + eps);
  }
}

struct TrainConfig {
  int epochs = 400;
  int batch_size = 40;
  AdamConfig adam;
  LossParams loss;
  std::uint64_t seed = 0;
  int workers = 0;  // 0: VIPNAV_WORKERS
  int start_epoch = 0;  // epochs already done (resume)
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double loss = 0.0;             // mean over batches, regularizer included
  double prediction_loss = 0.0;  // mean squared-error part only
  std::uint64_t steps = 0;       // optimizer steps so far
  double seconds = 0.0;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"type", "epoch"}, {"epoch", epoch}, {"loss", loss}, {"prediction_loss", prediction_loss},
            {"steps", steps}, {"seconds", seconds}};
  }
};

/// Gradients are accumulated in this many fixed chunks and summed in chunk
/// order, so results do not depend on the worker count.
inline constexpr int kGradientChunks = 8;

struct BatchResult {
  double prediction_loss = 0.0;  // mean over the batch
  double loss = 0.0;             // plus regularizer
};

/// Mean-loss gradient of one mini-batch. Sample k draws its dropout masks
/// from dropout_rng.substream(k).
template <class T>
BatchResult batch_gradient(const NetworkParams<T>& p, const TrainingData<T>& data, std::span<const std::size_t> batch,
                           const LossParams& lp, const RngStream& dropout_rng, std::vector<T>& grad, int workers) {
  const std::size_t B = batch.size();
  const std::size_t chunks = std::min<std::size_t>(B, kGradientChunks);
  std::vector<std::vector<T>> chunk_grad(chunks);
  std::vector<double> chunk_loss(chunks, 0.0);
  const double scale = 1.0 / static_cast<double>(B);
  auto run_chunk = [&](std::size_t c) {
    auto& g = chunk_grad[c];
    g.assign(p.values.size(), T(0));
    ForwardCache<T> cache;
    NetInput<T> scratch;
    for (std::size_t k = c * B / chunks; k < (c + 1) * B / chunks; ++k) {
      const std::size_t idx = batch[k];
      const NetInput<T>& in = data.fetch(idx, scratch);
      RngStream r = dropout_rng.substream(k);
      const Action out = forward(p, in, true, &r, cache);
      const Action ref = data.target(idx);
      chunk_loss[c] += prediction_loss(out, ref, lp);
      backward(p, cache, loss_output_gradient<T>(out, ref, lp, scale), g);
    }
  };
  const int nw = std::max(1, std::min<int>(workers, static_cast<int>(chunks)));
  if (nw == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nw));
    for (int w = 0; w < nw; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t c = static_cast<std::size_t>(w); c < chunks; c += static_cast<std::size_t>(nw)) run_chunk(c);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  grad.assign(p.values.size(), T(0));
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += chunk_grad[c][i];
    total += chunk_loss[c];
  }
  add_l2_gradient(p, lp, grad);
  BatchResult r;
  r.prediction_loss = total * scale;
  r.loss = r.prediction_loss + l2_penalty(p, lp);
  return r;
}

/// Fisher-Yates permutation of [0, n) keyed on (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream r = RngStream(seed, 0x5A0F).substream(static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[r.below(i)]);
  return order;
}

/// Adam over shuffled mini-batches. Continues from p's Adam state and
/// cfg.start_epoch, so a resumed run repeats the uninterrupted one exactly.
template <class T>
std::vector<EpochLog> train(NetworkParams<T>& p, const TrainingData<T>& data, const TrainConfig& cfg,
                            const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (data.size == 0) throw std::invalid_argument("train: dataset is empty");
  if (cfg.batch_size <= 0) throw std::invalid_argument("train: batch size must be positive");
  const int workers = cfg.workers > 0 ? cfg.workers : worker_count_from_env();
  std::vector<EpochLog> logs;
  std::vector<T> grad;
  const RngStream dropout_root(cfg.seed, 0xD809);
  for (int epoch = cfg.start_epoch; epoch < cfg.start_epoch + cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(data.size, cfg.seed, epoch);
    double loss_sum = 0.0, pred_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const RngStream drop = dropout_root.substream(static_cast<std::uint64_t>(epoch)).substream(batches);
      const BatchResult r = batch_gradient(p, data, batch, cfg.loss, drop, grad, workers);
      adam_step(p, grad, cfg.adam);
      loss_sum += r.loss;
      pred_sum += r.prediction_loss;
      ++batches;
    }
    EpochLog log;
    log.epoch = epoch + 1;
    log.loss = loss_sum / static_cast<double>(batches);
    log.prediction_loss = pred_sum / static_cast<double>(batches);
    log.steps = p.adam.step;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!p.all_finite()) throw std::runtime_error("train: parameters became non-finite in epoch " + std::to_string(log.epoch));
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

/// Mean prediction loss with dropout off.
template <class T>
double evaluate_loss(const NetworkParams<T>& p, const TrainingData<T>& data, const LossParams& lp) {
  double sum = 0.0;
  ForwardCache<T> cache;
  NetInput<T> scratch;
  for (std::size_t i = 0; i < data.size; ++i) {
    const Action out = forward(p, data.fetch(i, scratch), false, nullptr, cache);
    sum += prediction_loss(out, data.target(i), lp);
  }
  return sum / static_cast<double>(data.size);
}

// ---------------------------------------------------------------------------
// Checkpoint file:
//   "VIPNAVCK" | u32 version | u64 spec hash | u32 len + spec JSON
//   | u32 len + metadata JSON | u32 tensor count
//   | per tensor: u32 name len, name, u32 rank, u32 extents...
//   | u64 adam step | u8 has moments | f32 values... | [f32 m..., f32 v...]
// All integers and floats little-endian.

inline constexpr char kCheckpointMagic[8] = {'V', 'I', 'P', 'N', 'A', 'V', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <class U>
void put_le(std::ostream& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, sizeof(U));
}
template <class U>
U get_le(std::istream& in, const std::string& what) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw std::runtime_error("checkpoint truncated while reading " + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}
inline void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& in, const std::string& what) {
  const auto n = get_le<std::uint32_t>(in, what);
  if (n > (1u << 26)) throw std::runtime_error("checkpoint: implausible length for " + what);
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw std::runtime_error("checkpoint truncated while reading " + what);
  return s;
}
template <class T>
void put_floats(std::ostream& out, const std::vector<T>& v) {
  for (T x : v) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
}
template <class T>
void get_floats(std::istream& in, std::vector<T>& v, std::size_t n, const std::string& what) {
  v.resize(n);
  for (auto& x : v) x = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(in, what)));
}
}  // namespace detail

template <class T>
void save_checkpoint(std::ostream& out, const NetworkParams<T>& p, const nlohmann::json& meta = nlohmann::json::object()) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, spec_hash(p.spec));
  detail::put_string(out, nlohmann::json(p.spec).dump());
  detail::put_string(out, meta.dump());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.layout.tensors.size()));
  for (const ParamInfo& t : p.layout.tensors) {
    detail::put_string(out, t.name);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  detail::put_le<std::uint64_t>(out, p.adam.step);
  const bool moments = p.adam.m.size() == p.values.size();
  out.put(moments ? 1 : 0);
  detail::put_floats(out, p.values);
  if (moments) {
    detail::put_floats(out, p.adam.m);
    detail::put_floats(out, p.adam.v);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

template <class T>
void save_checkpoint(const std::string& path, const NetworkParams<T>& p, const nlohmann::json& meta = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  save_checkpoint(out, p, meta);
}

struct LoadedCheckpoint {
  NetworkParams<float> params;
  nlohmann::json meta;
};

inline LoadedCheckpoint load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto version = detail::get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto hash = detail::get_le<std::uint64_t>(in, "spec hash");
  NetworkSpec spec;
  try {
    spec = nlohmann::json::parse(detail::get_string(in, "spec")).get<NetworkSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: bad spec: ") + e.what());
  }
  if (spec_hash(spec) != hash) throw std::runtime_error("checkpoint: spec hash mismatch");
  LoadedCheckpoint c;
  c.meta = nlohmann::json::parse(detail::get_string(in, "metadata"));
  c.params = NetworkParams<float>(spec);
  const auto count = detail::get_le<std::uint32_t>(in, "tensor count");
  if (count != c.params.layout.tensors.size()) throw std::runtime_error("checkpoint: tensor count differs from spec");
  for (const ParamInfo& t : c.params.layout.tensors) {
    const std::string name = detail::get_string(in, "tensor name");
    const auto rank = detail::get_le<std::uint32_t>(in, "rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::get_le<std::uint32_t>(in, "extent"));
    if (name != t.name || shape != t.shape) throw std::runtime_error("checkpoint: shape table differs at " + name);
  }
  c.params.adam.step = detail::get_le<std::uint64_t>(in, "adam step");
  const int moments = in.get();
  if (moments != 0 && moments != 1) throw std::runtime_error("checkpoint: bad moment flag");
  detail::get_floats(in, c.params.values, c.params.layout.total, "parameters");
  if (moments) {
    detail::get_floats(in, c.params.adam.m, c.params.layout.total, "adam m");
    detail::get_floats(in, c.params.adam.v, c.params.layout.total, "adam v");
  }
  return c;
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

}  // namespace vipnav
