#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "vipnav/command.hpp"
#include "vipnav/rng.hpp"

namespace vipnav {

// ---------------------------------------------------------------------------
// Architecture

struct ConvSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 2;
  bool operator==(const ConvSpec&) const = default;
};

/// Conv stack (ReLU after each layer, padding kernel/2, no pooling) followed
/// by a dropout on the flattened features and a stack of ReLU dense layers.
struct EncoderSpec {
  int in_channels = 1;
  std::vector<ConvSpec> convs;
  std::vector<int> dense;
  bool operator==(const EncoderSpec&) const = default;
};

struct Shape3 {
  int c = 0, h = 0, w = 0;
  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape3&) const = default;
};

inline int conv_out_extent(int in, const ConvSpec& c) noexcept {
  const int pad = c.kernel / 2;
  return (in + 2 * pad - c.kernel) / c.stride + 1;
}

struct NetworkSpec {
  int input_width = 256;
  int input_height = 192;
  EncoderSpec encoder1;
  std::optional<EncoderSpec> encoder2;
  std::vector<int> head = {256, 64};  // hidden widths; a linear 2-wide output follows
  int command_width = 4;
  int output_width = 2;
  double dropout = 0.5;

  static std::vector<ConvSpec> default_convs() {
    return {{24, 5, 2}, {36, 3, 2}, {48, 3, 2}, {64, 3, 2}, {64, 3, 2}};
  }

  /// One encoder with two 512-wide dense layers.
  static NetworkSpec single(int in_channels = 1, int width = 256, int height = 192) {
    NetworkSpec s;
    s.input_width = width;
    s.input_height = height;
    s.encoder1 = {in_channels, default_convs(), {512, 512}};
    return s;
  }

  /// Depth encoder (480, 480) plus categorized-detection encoder (32, 32).
  static NetworkSpec dual(int width = 256, int height = 192) {
    NetworkSpec s;
    s.input_width = width;
    s.input_height = height;
    s.encoder1 = {1, default_convs(), {480, 480}};
    s.encoder2 = EncoderSpec{1, default_convs(), {32, 32}};
    return s;
  }

  [[nodiscard]] bool is_dual() const noexcept { return encoder2.has_value(); }

  [[nodiscard]] std::vector<Shape3> conv_shapes(const EncoderSpec& e) const {
    std::vector<Shape3> shapes{{e.in_channels, input_height, input_width}};
    for (const ConvSpec& c : e.convs) {
      const Shape3& p = shapes.back();
      shapes.push_back({c.out_channels, conv_out_extent(p.h, c), conv_out_extent(p.w, c)});
    }
    return shapes;
  }

  [[nodiscard]] int feature_width(const EncoderSpec& e) const {
    return e.dense.empty() ? static_cast<int>(conv_shapes(e).back().size()) : e.dense.back();
  }

  /// Width of [encoder1 features, encoder2 features, command].
  [[nodiscard]] int concat_width() const {
    return feature_width(encoder1) + (encoder2 ? feature_width(*encoder2) : 0) + command_width;
  }

  void validate() const {
    if (input_width <= 0 || input_height <= 0) throw std::invalid_argument("network: bad input size");
    if (command_width != 4 || output_width != 2) throw std::invalid_argument("network: command width 4, output width 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("network: dropout must be in [0, 1)");
    auto check = [&](const EncoderSpec& e) {
      if (e.in_channels <= 0 || e.convs.empty()) throw std::invalid_argument("network: encoder needs channels and convs");
      for (const auto& c : e.convs) {
        if (c.out_channels <= 0 || c.kernel <= 0 || c.stride <= 0) throw std::invalid_argument("network: bad conv layer");
      }
      for (const Shape3& s : conv_shapes(e)) {
        if (s.h <= 0 || s.w <= 0) throw std::invalid_argument("network: conv stack shrinks input to nothing");
      }
      for (int d : e.dense) {
        if (d <= 0) throw std::invalid_argument("network: bad dense width");
      }
    };
    check(encoder1);
    if (encoder2) check(*encoder2);
    for (int d : head) {
      if (d <= 0) throw std::invalid_argument("network: bad head width");
    }
  }

  bool operator==(const NetworkSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const EncoderSpec& e) {
  nlohmann::json convs = nlohmann::json::array();
  for (const auto& c : e.convs) convs.push_back({c.out_channels, c.kernel, c.stride});
  j = {{"in_channels", e.in_channels}, {"convs", convs}, {"dense", e.dense}};
}
inline void from_json(const nlohmann::json& j, EncoderSpec& e) {
  e.in_channels = j.at("in_channels").get<int>();
  e.convs.clear();
  for (const auto& c : j.at("convs")) e.convs.push_back({c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>()});
  e.dense = j.at("dense").get<std::vector<int>>();
}
inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = {{"input", {s.input_width, s.input_height}},
       {"encoder1", s.encoder1},
       {"encoder2", s.encoder2 ? nlohmann::json(*s.encoder2) : nlohmann::json()},
       {"head", s.head},
       {"command_width", s.command_width},
       {"output_width", s.output_width},
       {"dropout", s.dropout}};
}
inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
  s.input_width = j.at("input").at(0).get<int>();
  s.input_height = j.at("input").at(1).get<int>();
  j.at("encoder1").get_to(s.encoder1);
  if (j.at("encoder2").is_null()) {
    s.encoder2.reset();
  } else {
    s.encoder2 = j.at("encoder2").get<EncoderSpec>();
  }
  s.head = j.at("head").get<std::vector<int>>();
  s.command_width = j.at("command_width").get<int>();
  s.output_width = j.at("output_width").get<int>();
  s.dropout = j.at("dropout").get<double>();
}

/// FNV-1a over the canonical JSON form.
inline std::uint64_t spec_hash(const NetworkSpec& s) {
  const std::string text = nlohmann::json(s).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Parameters

enum class ParamRole { ConvWeight, ConvBias, DenseWeight, DenseBias };

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  ParamRole role = ParamRole::DenseWeight;
  int fan_in = 1;
};

/// Location of one layer's weight and bias inside the flat parameter vector.
struct LayerSlots {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

struct EncoderLayout {
  std::vector<LayerSlots> convs;
  std::vector<LayerSlots> dense;
};

struct ParamLayout {
  std::vector<ParamInfo> tensors;
  EncoderLayout enc[2];
  std::vector<LayerSlots> head;  // hidden layers then output layer
  std::size_t total = 0;

  static ParamLayout build(const NetworkSpec& spec) {
    ParamLayout L;
    auto add = [&](std::string name, std::vector<int> shape, ParamRole role, int fan_in) {
      std::size_t n = 1;
      for (int d : shape) n *= static_cast<std::size_t>(d);
      L.tensors.push_back({std::move(name), std::move(shape), L.total, n, role, fan_in});
      L.total += n;
      return L.tensors.size() - 1;
    };
    auto add_encoder = [&](const EncoderSpec& e, const std::string& prefix, EncoderLayout& out) {
      const auto shapes = spec.conv_shapes(e);
      for (std::size_t i = 0; i < e.convs.size(); ++i) {
        const auto& c = e.convs[i];
        const int k = shapes[i].c * c.kernel * c.kernel;
        const auto w = add(prefix + ".conv" + std::to_string(i) + ".w", {c.out_channels, shapes[i].c, c.kernel, c.kernel},
                           ParamRole::ConvWeight, k);
        const auto b = add(prefix + ".conv" + std::to_string(i) + ".b", {c.out_channels}, ParamRole::ConvBias, k);
        out.convs.push_back({w, b});
      }
      int in = static_cast<int>(shapes.back().size());
      for (std::size_t i = 0; i < e.dense.size(); ++i) {
        const auto w = add(prefix + ".fc" + std::to_string(i) + ".w", {e.dense[i], in}, ParamRole::DenseWeight, in);
        const auto b = add(prefix + ".fc" + std::to_string(i) + ".b", {e.dense[i]}, ParamRole::DenseBias, in);
        out.dense.push_back({w, b});
        in = e.dense[i];
      }
    };
    add_encoder(spec.encoder1, "enc1", L.enc[0]);
    if (spec.encoder2) add_encoder(*spec.encoder2, "enc2", L.enc[1]);
    int in = spec.concat_width();
    for (std::size_t i = 0; i <= spec.head.size(); ++i) {
      const bool last = i == spec.head.size();
      const int out = last ? spec.output_width : spec.head[i];
      const std::string name = last ? "head.out" : "head.fc" + std::to_string(i);
      const auto w = add(name + ".w", {out, in}, ParamRole::DenseWeight, in);
      const auto b = add(name + ".b", {out}, ParamRole::DenseBias, in);
      L.head.push_back({w, b});
      in = out;
    }
    return L;
  }
};

template <class T>
struct AdamState {
  std::vector<T> m, v;
  std::uint64_t step = 0;
};

/// All learnable tensors of the policy, in one flat vector.
template <class T>
struct NetworkParams {
  NetworkSpec spec;
  ParamLayout layout;
  std::vector<T> values;
  AdamState<T> adam;

  NetworkParams() = default;
  explicit NetworkParams(const NetworkSpec& s) : spec(s), layout(ParamLayout::build(s)), values(layout.total, T(0)) {
    spec.validate();
  }

  [[nodiscard]] const ParamInfo& info(std::size_t tensor) const { return layout.tensors[tensor]; }
  T* data(std::size_t tensor) noexcept { return values.data() + layout.tensors[tensor].offset; }
  const T* data(std::size_t tensor) const noexcept { return values.data() + layout.tensors[tensor].offset; }

  /// Fan-in scaled uniform weights (bound sqrt(6 / fan_in)), zero biases.
  void initialize(const RngStream& rng) {
    for (std::size_t t = 0; t < layout.tensors.size(); ++t) {
      const ParamInfo& p = layout.tensors[t];
      T* d = values.data() + p.offset;
      if (p.role == ParamRole::ConvBias || p.role == ParamRole::DenseBias) {
        std::fill(d, d + p.size, T(0));
        continue;
      }
      RngStream r = rng.substream(t);
      const double bound = std::sqrt(6.0 / p.fan_in);
      for (std::size_t i = 0; i < p.size; ++i) d[i] = static_cast<T>(r.uniform(-bound, bound));
    }
    adam = {};
  }

  template <class U>
  [[nodiscard]] NetworkParams<U> cast() const {
    NetworkParams<U> out;
    out.spec = spec;
    out.layout = layout;
    out.values.assign(values.begin(), values.end());
    out.adam.m.assign(adam.m.begin(), adam.m.end());
    out.adam.v.assign(adam.v.begin(), adam.v.end());
    out.adam.step = adam.step;
    return out;
  }

  [[nodiscard]] bool all_finite() const {
    for (T v : values) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Forward / backward

/// Network input: primary planes (C x H x W, scaled to [0, 1]), the
/// optional semantic plane (H x W), and the one-hot command.
template <class T>
struct NetInput {
  std::vector<T> primary;
  std::vector<T> semantic;
  std::array<T, 4> command{};
};

template <class T>
struct EncoderCache {
  std::vector<Shape3> shapes;
  std::vector<std::vector<T>> acts;  // acts[0] input, acts[i + 1] post-ReLU conv i
  std::vector<std::vector<T>> cols;  // im2col of each conv input
  std::vector<T> dropout_mask;       // empty when dropout is off
  std::vector<T> flat;               // flattened conv features after dropout
  std::vector<std::vector<T>> dense; // post-ReLU dense outputs
};

template <class T>
struct ForwardCache {
  EncoderCache<T> enc[2];
  std::vector<T> concat;
  std::vector<std::vector<T>> head;  // post-activation outputs; last is the linear output
  std::vector<T> head_mask;          // dropout after the first head layer
  bool train = false;

  [[nodiscard]] Action output() const {
    return {static_cast<double>(head.back()[0]), static_cast<double>(head.back()[1])};
  }

  /// FNV-1a over every dropout mask, for replay checks.
  [[nodiscard]] std::uint64_t mask_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&](const std::vector<T>& m) {
      for (T v : m) {
        h ^= v != T(0) ? 0x9Bu : 0x31u;
        h *= 0x100000001b3ull;
      }
      h ^= m.size();
      h *= 0x100000001b3ull;
    };
    feed(enc[0].dropout_mask);
    feed(enc[1].dropout_mask);
    feed(head_mask);
    return h;
  }
};

namespace nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// col[(c*k + ky)*k + kx][oy*Wo + ox] = in[c][oy*s - p + ky][ox*s - p + kx] (0 outside).
template <class T>
void im2col(const T* in, const Shape3& is, const ConvSpec& c, const Shape3& os, std::vector<T>& col) {
  const int k = c.kernel, s = c.stride, pad = k / 2;
  const std::size_t P = static_cast<std::size_t>(os.h) * os.w;
  col.assign(static_cast<std::size_t>(is.c) * k * k * P, T(0));
  for (int ch = 0; ch < is.c; ++ch) {
    const T* plane = in + static_cast<std::size_t>(ch) * is.h * is.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.data() + (static_cast<std::size_t>(ch * k + ky) * k + kx) * P;
        for (int oy = 0; oy < os.h; ++oy) {
          const int iy = oy * s - pad + ky;
          if (iy < 0 || iy >= is.h) continue;
          const T* src = plane + static_cast<std::size_t>(iy) * is.w;
          T* dst = row + static_cast<std::size_t>(oy) * os.w;
          for (int ox = 0; ox < os.w; ++ox) {
            const int ix = ox * s - pad + kx;
            if (ix >= 0 && ix < is.w) dst[ox] = src[ix];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-add columns back onto the input grid.
template <class T>
void col2im(const std::vector<T>& col, const Shape3& is, const ConvSpec& c, const Shape3& os, T* out) {
  const int k = c.kernel, s = c.stride, pad = k / 2;
  const std::size_t P = static_cast<std::size_t>(os.h) * os.w;
  std::fill(out, out + is.size(), T(0));
  for (int ch = 0; ch < is.c; ++ch) {
    T* plane = out + static_cast<std::size_t>(ch) * is.h * is.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.data() + (static_cast<std::size_t>(ch * k + ky) * k + kx) * P;
        for (int oy = 0; oy < os.h; ++oy) {
          const int iy = oy * s - pad + ky;
          if (iy < 0 || iy >= is.h) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * is.w;
          const T* src = row + static_cast<std::size_t>(oy) * os.w;
          for (int ox = 0; ox < os.w; ++ox) {
            const int ix = ox * s - pad + kx;
            if (ix >= 0 && ix < is.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class T>
void relu_inplace(std::vector<T>& v) {
  for (T& x : v) x = x > T(0) ? x : T(0);
}

/// Inverted dropout: kept units are scaled by 1 / keep.
template <class T>
void draw_dropout(std::vector<T>& mask, std::size_t n, double rate, RngStream& rng) {
  mask.resize(n);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (T& m : mask) m = rng.uniform() < rate ? T(0) : scale;
}

// Fixed-order kernels: Eigen's vectorized paths peel unaligned heads, which
// makes results depend on where buffers happen to land in memory.
template <class T>
T dot(const T* a, const T* b, int n) {
  T acc[8] = {};
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  for (; i < n; ++i) acc[0] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <class T>
T dot_ones(const T* a, int n) {
  T acc[8] = {};
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k];
  }
  for (; i < n; ++i) acc[0] += a[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// y += alpha * x
template <class T>
void axpy(T alpha, const T* x, T* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void dense_forward(const NetworkParams<T>& P, const LayerSlots& L, const std::vector<T>& in, std::vector<T>& out,
                   bool relu) {
  const auto& wi = P.info(L.weight);
  const int rows = wi.shape[0], cols = wi.shape[1];
  out.resize(static_cast<std::size_t>(rows));
  const T* w = P.data(L.weight);
  const T* b = P.data(L.bias);
  for (int r = 0; r < rows; ++r) out[static_cast<std::size_t>(r)] = b[r] + dot(w + static_cast<std::size_t>(r) * cols, in.data(), cols);
  if (relu) relu_inplace(out);
}

/// Backward through y = act(W x + b). `dy` is dL/dy on entry (post-activation);
/// returns dL/dx in `dx` when requested.
template <class T>
void dense_backward(const NetworkParams<T>& P, const LayerSlots& L, const std::vector<T>& x, const std::vector<T>& y,
                    std::vector<T>& dy, bool relu, std::vector<T>* dx, std::vector<T>& grad) {
  const auto& wi = P.info(L.weight);
  const int rows = wi.shape[0], cols = wi.shape[1];
  if (relu) {
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (!(y[i] > T(0))) dy[i] = T(0);
    }
  }
  T* gw = grad.data() + wi.offset;
  T* gb = grad.data() + P.info(L.bias).offset;
  const T* w = P.data(L.weight);
  if (dx) dx->assign(static_cast<std::size_t>(cols), T(0));
  for (int r = 0; r < rows; ++r) {
    const T d = dy[static_cast<std::size_t>(r)];
    gb[r] += d;
    if (d == T(0)) continue;
    axpy(d, x.data(), gw + static_cast<std::size_t>(r) * cols, cols);
    if (dx) axpy(d, w + static_cast<std::size_t>(r) * cols, dx->data(), cols);
  }
}

template <class T>
void encoder_forward(const NetworkSpec& spec, const EncoderSpec& e, const EncoderLayout& L, const NetworkParams<T>& P,
                     const std::vector<T>& input, bool train, RngStream* rng, EncoderCache<T>& c) {
  c.shapes = spec.conv_shapes(e);
  if (input.size() != c.shapes[0].size()) throw std::invalid_argument("network: input plane size mismatch");
  c.acts.resize(e.convs.size() + 1);
  c.cols.resize(e.convs.size());
  c.acts[0] = input;
  for (std::size_t i = 0; i < e.convs.size(); ++i) {
    const Shape3 &is = c.shapes[i], &os = c.shapes[i + 1];
    im2col(c.acts[i].data(), is, e.convs[i], os, c.cols[i]);
    const int K = is.c * e.convs[i].kernel * e.convs[i].kernel;
    const int Pn = os.h * os.w;
    auto& out = c.acts[i + 1];
    out.resize(os.size());
    MapMat<T> o(out.data(), os.c, Pn);
    o.noalias() = CMapMat<T>(P.data(L.convs[i].weight), os.c, K) * CMapMat<T>(c.cols[i].data(), K, Pn);
    o.colwise() += CMapVec<T>(P.data(L.convs[i].bias), os.c);
    relu_inplace(out);
  }
  c.flat = c.acts.back();
  if (train && spec.dropout > 0.0) {
    draw_dropout(c.dropout_mask, c.flat.size(), spec.dropout, *rng);
    for (std::size_t i = 0; i < c.flat.size(); ++i) c.flat[i] *= c.dropout_mask[i];
  } else {
    c.dropout_mask.clear();
  }
  c.dense.resize(e.dense.size());
  const std::vector<T>* x = &c.flat;
  for (std::size_t i = 0; i < e.dense.size(); ++i) {
    dense_forward(P, L.dense[i], *x, c.dense[i], true);
    x = &c.dense[i];
  }
}

template <class T>
const std::vector<T>& encoder_features(const EncoderCache<T>& c) {
  return c.dense.empty() ? c.flat : c.dense.back();
}

template <class T>
void encoder_backward(const EncoderSpec& e, const EncoderLayout& L, const NetworkParams<T>& P, EncoderCache<T>& c,
                      std::vector<T> dfeat, std::vector<T>& grad) {
  std::vector<T> dx;
  for (std::size_t i = e.dense.size(); i-- > 0;) {
    const std::vector<T>& x = i == 0 ? c.flat : c.dense[i - 1];
    dense_backward(P, L.dense[i], x, c.dense[i], dfeat, true, &dx, grad);
    dfeat.swap(dx);
  }
  // dfeat is now dL/d(flat after dropout)
  if (!c.dropout_mask.empty()) {
    for (std::size_t i = 0; i < dfeat.size(); ++i) dfeat[i] *= c.dropout_mask[i];
  }
  std::vector<T> dcol, dprev;
  for (std::size_t i = e.convs.size(); i-- > 0;) {
    const Shape3 &is = c.shapes[i], &os = c.shapes[i + 1];
    const auto& out = c.acts[i + 1];
    for (std::size_t j = 0; j < dfeat.size(); ++j) {
      if (!(out[j] > T(0))) dfeat[j] = T(0);
    }
    const int K = is.c * e.convs[i].kernel * e.convs[i].kernel;
    const int Pn = os.h * os.w;
    CMapMat<T> dout(dfeat.data(), os.c, Pn);
    const auto& wi = P.info(L.convs[i].weight);
    MapMat<T>(grad.data() + wi.offset, os.c, K).noalias() +=
        dout * CMapMat<T>(c.cols[i].data(), K, Pn).transpose();
    T* gb = grad.data() + P.info(L.convs[i].bias).offset;
    for (int ch = 0; ch < os.c; ++ch) gb[ch] += dot_ones(dfeat.data() + static_cast<std::size_t>(ch) * Pn, Pn);
    if (i == 0) break;
    dcol.resize(static_cast<std::size_t>(K) * Pn);
    MapMat<T>(dcol.data(), K, Pn).noalias() = CMapMat<T>(P.data(L.convs[i].weight), os.c, K).transpose() * dout;
    dprev.resize(is.size());
    col2im(dcol, is, e.convs[i], os, dprev.data());
    dfeat.swap(dprev);
  }
}

}  // namespace nn

/// Forward pass. Dropout masks are drawn from `rng` only in train mode and
/// are kept in the cache so backward replays them.
template <class T>
Action forward(const NetworkParams<T>& P, const NetInput<T>& in, bool train, RngStream* rng, ForwardCache<T>& c) {
  const NetworkSpec& spec = P.spec;
  if (train && spec.dropout > 0.0 && rng == nullptr) throw std::invalid_argument("forward: train mode needs an rng");
  if (spec.is_dual() == in.semantic.empty()) throw std::invalid_argument("forward: semantic input must be present exactly for dual networks");
  c.train = train;
  nn::encoder_forward(spec, spec.encoder1, P.layout.enc[0], P, in.primary, train, rng, c.enc[0]);
  c.concat = nn::encoder_features(c.enc[0]);
  if (spec.encoder2) {
    nn::encoder_forward(spec, *spec.encoder2, P.layout.enc[1], P, in.semantic, train, rng, c.enc[1]);
    const auto& f2 = nn::encoder_features(c.enc[1]);
    c.concat.insert(c.concat.end(), f2.begin(), f2.end());
  } else {
    c.enc[1] = {};
  }
  c.concat.insert(c.concat.end(), in.command.begin(), in.command.end());

  const std::size_t n = P.layout.head.size();
  c.head.resize(n);
  const std::vector<T>* x = &c.concat;
  for (std::size_t i = 0; i < n; ++i) {
    const bool last = i + 1 == n;
    nn::dense_forward(P, P.layout.head[i], *x, c.head[i], !last);
    if (i == 0 && !last) {
      if (train && spec.dropout > 0.0) {
        nn::draw_dropout(c.head_mask, c.head[0].size(), spec.dropout, *rng);
        for (std::size_t j = 0; j < c.head[0].size(); ++j) c.head[0][j] *= c.head_mask[j];
      } else {
        c.head_mask.clear();
      }
    }
    x = &c.head[i];
  }
  return c.output();
}

/// Backpropagates dL/d(output) through the cached pass, accumulating into
/// `grad` (same layout as P.values).
template <class T>
void backward(const NetworkParams<T>& P, ForwardCache<T>& c, const std::array<T, 2>& dout, std::vector<T>& grad) {
  const NetworkSpec& spec = P.spec;
  if (grad.size() != P.values.size()) grad.assign(P.values.size(), T(0));
  const std::size_t n = P.layout.head.size();
  std::vector<T> dy(dout.begin(), dout.end()), dx;
  for (std::size_t i = n; i-- > 0;) {
    const bool last = i + 1 == n;
    if (i == 0 && !c.head_mask.empty()) {
      // head[0] holds the masked activation; the mask is 0 or a positive
      // scale, so "post-ReLU > 0" still marks the active units.
      for (std::size_t j = 0; j < dy.size(); ++j) dy[j] *= c.head_mask[j];
    }
    const std::vector<T>& x = i == 0 ? c.concat : c.head[i - 1];
    nn::dense_backward(P, P.layout.head[i], x, c.head[i], dy, !last, &dx, grad);
    dy.swap(dx);
  }
  // dy = dL/dconcat
  const int w1 = spec.feature_width(spec.encoder1);
  std::vector<T> d1(dy.begin(), dy.begin() + w1);
  nn::encoder_backward(spec.encoder1, P.layout.enc[0], P, c.enc[0], std::move(d1), grad);
  if (spec.encoder2) {
    const int w2 = spec.feature_width(*spec.encoder2);
    std::vector<T> d2(dy.begin() + w1, dy.begin() + w1 + w2);
    nn::encoder_backward(*spec.encoder2, P.layout.enc[1], P, c.enc[1], std::move(d2), grad);
  }
}

// ---------------------------------------------------------------------------
// Loss

struct LossParams {
  double lambda = 1.0;
  double gamma = 1e-7;  // dense-layer weights only
};

/// Squared velocity errors (omega weighted by lambda), without the regularizer.
inline double prediction_loss(const Action& a, const Action& ref, const LossParams& lp) noexcept {
  const double dv = a.v - ref.v, dw = a.omega - ref.omega;
  return dv * dv + lp.lambda * dw * dw;
}

template <class T>
double l2_penalty(const NetworkParams<T>& P, const LossParams& lp) {
  double s = 0.0;
  for (const ParamInfo& t : P.layout.tensors) {
    if (t.role != ParamRole::DenseWeight) continue;
    const T* d = P.values.data() + t.offset;
    for (std::size_t i = 0; i < t.size; ++i) s += static_cast<double>(d[i]) * static_cast<double>(d[i]);
  }
  return lp.gamma * s;
}

/// Per-sample loss: squared errors plus gamma * sum of squared dense weights.
template <class T>
double loss(const Action& a, const Action& ref, const NetworkParams<T>& P, const LossParams& lp) {
  return prediction_loss(a, ref, lp) + l2_penalty(P, lp);
}

/// Adds d(gamma * sum theta^2)/dtheta = 2 gamma theta (dense weights) scaled by `scale`.
template <class T>
void add_l2_gradient(const NetworkParams<T>& P, const LossParams& lp, std::vector<T>& grad, double scale = 1.0) {
  if (grad.size() != P.values.size()) grad.assign(P.values.size(), T(0));
  const T k = static_cast<T>(2.0 * lp.gamma * scale);
  for (const ParamInfo& t : P.layout.tensors) {
    if (t.role != ParamRole::DenseWeight) continue;
    for (std::size_t i = 0; i < t.size; ++i) grad[t.offset + i] += k * P.values[t.offset + i];
  }
}

template <class T>
std::array<T, 2> loss_output_gradient(const Action& a, const Action& ref, const LossParams& lp, double scale = 1.0) {
  return {static_cast<T>(2.0 * (a.v - ref.v) * scale), static_cast<T>(2.0 * lp.lambda * (a.omega - ref.omega) * scale)};
}

/// Full gradient of the per-sample loss for a cached forward pass.
template <class T>
std::vector<T> gradients(const NetworkParams<T>& P, ForwardCache<T>& c, const Action& ref, const LossParams& lp) {
  std::vector<T> grad(P.values.size(), T(0));
  backward(P, c, loss_output_gradient<T>(c.output(), ref, lp), grad);
  add_l2_gradient(P, lp, grad);
  return grad;
}

/// Inference: dropout off, outputs clamped to the normalized action ranges.
template <class T>
Action predict(const NetworkParams<T>& P, const NetInput<T>& in) {
  ForwardCache<T> c;
  return forward(P, in, false, nullptr, c).clamped();
}

}  // namespace vipnav
