#pragma once

// Residual U-Net building blocks shared by every model variant.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "meal/ops.hpp"

namespace meal {

template <class T>
using NamedParams = std::vector<std::pair<std::string, Var<T>>>;

/// A feature tensor tagged with where it came from.
template <class T>
struct FeatureMap {
  Var<T> tensor;
  int stream = -1;  // -1: not stream-specific
  int level = 0;    // 0 = full resolution, increasing with each pooling

  const Shape& shape() const { return tensor.shape(); }
  std::size_t channels() const { return tensor.shape().back(); }
};

/// Glorot-uniform draw, the Keras default for convolution and dense kernels.
template <class T>
Tensor<T> glorot_uniform(Shape s, std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  Tensor<T> t(std::move(s));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

/// Stride-1, same-size 3-D convolution with bias. `transposed` selects the
/// transposed form used by the decoder's upsampling layers.
template <class T>
struct Conv3d {
  Var<T> weight;  // (k, k, k, Cin, Cout)
  Var<T> bias;    // (Cout)
  bool transposed = false;

  static Conv3d make(std::size_t k, std::size_t cin, std::size_t cout, RngStream& rng,
                     bool transposed = false) {
    Conv3d c;
    c.weight = Var<T>::parameter(glorot_uniform<T>(Shape{k, k, k, cin, cout}, k * k * k * cin, k * k * k * cout, rng));
    c.bias = Var<T>::parameter(Tensor<T>(Shape{cout}));
    c.transposed = transposed;
    return c;
  }

  std::size_t kernel() const { return weight.shape()[0]; }
  std::size_t in_channels() const { return weight.shape()[3]; }
  std::size_t out_channels() const { return weight.shape()[4]; }

  Var<T> operator()(const Var<T>& x) const {
    if (transposed) return conv_transpose3d_same(x, weight, bias);
    return conv3d(x, weight, bias, (kernel() - 1) / 2);
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

enum class DropoutPlacement { after_second_conv, after_first_conv };

struct BlockConfig {
  std::size_t filters = 64;
  double dropout_rate = 0.2;
  DropoutPlacement dropout_at = DropoutPlacement::after_second_conv;
};

/// Refined residual block: X + Dropout(ReLU(Conv(ReLU(Conv(X))))), both convs
/// 3x3x3 with same padding. A 1x1x1 projection adapts the skip path when the
/// input width differs from the filter count.
template <class T>
struct ResidualBlock {
  BlockConfig cfg;
  Conv3d<T> conv1, conv2;
  std::optional<Conv3d<T>> projection;

  static ResidualBlock make(std::size_t in_channels, const BlockConfig& cfg, RngStream& rng) {
    if (cfg.filters < 1) throw ConfigError("residual block needs at least one filter");
    if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0)
      throw ConfigError("dropout rate must lie in [0, 1)");
    ResidualBlock r;
    r.cfg = cfg;
    r.conv1 = Conv3d<T>::make(3, in_channels, cfg.filters, rng);
    r.conv2 = Conv3d<T>::make(3, cfg.filters, cfg.filters, rng);
    if (in_channels != cfg.filters) r.projection = Conv3d<T>::make(1, in_channels, cfg.filters, rng);
    return r;
  }

  Var<T> operator()(const Var<T>& x, bool training, RngStream* rng) const {
    Var<T> branch = relu(conv1(x));
    if (cfg.dropout_at == DropoutPlacement::after_first_conv)
      branch = dropout(branch, cfg.dropout_rate, training, rng);
    branch = relu(conv2(branch));
    if (cfg.dropout_at == DropoutPlacement::after_second_conv)
      branch = dropout(branch, cfg.dropout_rate, training, rng);
    const Var<T> skip = projection ? (*projection)(x) : x;
    return add(skip, branch);
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
    if (projection) projection->collect(prefix + ".proj", out);
  }
};

template <class T>
struct EncoderOutput {
  FeatureMap<T> bottleneck;
  std::vector<FeatureMap<T>> skips;  // one per pooled scale, finest first
};

/// RRB(w0) -> maxpool -> RRB(w1) -> maxpool -> ... -> RRB(wn).
template <class T>
struct Encoder {
  std::vector<ResidualBlock<T>> blocks;

  static Encoder make(std::size_t in_channels, const std::vector<std::size_t>& widths,
                      double dropout_rate, DropoutPlacement at, RngStream& rng) {
    if (widths.empty()) throw ConfigError("encoder needs at least one width");
    Encoder e;
    std::size_t c = in_channels;
    for (std::size_t w : widths) {
      e.blocks.push_back(ResidualBlock<T>::make(c, BlockConfig{w, dropout_rate, at}, rng));
      c = w;
    }
    return e;
  }

  std::size_t downsample_factor() const { return std::size_t{1} << (blocks.size() - 1); }
  std::size_t out_channels() const { return blocks.back().cfg.filters; }

  EncoderOutput<T> operator()(const Var<T>& x, bool training, RngStream* rng, int stream = -1) const {
    require_rank5(x.value(), "encode");
    const std::size_t f = downsample_factor();
    const auto& s = x.shape();
    if (s[1] % f || s[2] % f || s[3] % f)
      throw ShapeError("encode: spatial dims " + shape_str(s) + " must be divisible by " +
                       std::to_string(f));
    EncoderOutput<T> out;
    Var<T> h = x;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (i > 0) h = max_pool2(h);
      h = blocks[i](h, training, rng);
      if (i + 1 < blocks.size()) out.skips.push_back({h, stream, static_cast<int>(i)});
    }
    out.bottleneck = {h, stream, static_cast<int>(blocks.size() - 1)};
    return out;
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(prefix + ".rrb" + std::to_string(i), out);
  }
};

/// Upsampling layer: nearest-neighbour x2 followed by a 2x2x2 transposed convolution.
template <class T>
struct UpsampleLayer {
  Conv3d<T> conv;

  static UpsampleLayer make(std::size_t channels, RngStream& rng) {
    return {Conv3d<T>::make(2, channels, channels, rng, /*transposed=*/true)};
  }
  Var<T> operator()(const Var<T>& x) const { return conv(upsample_nearest2(x)); }
  void collect(const std::string& prefix, NamedParams<T>& out) const { conv.collect(prefix, out); }
};

/// Decoder applying, for each width in order, a residual block and then an
/// upsampling layer: for widths {64, 128} this is U . R128 . U . R64.
/// With skips enabled, the encoder feature at the matching scale is
/// concatenated after each upsampling.
template <class T>
struct Decoder {
  std::vector<ResidualBlock<T>> blocks;
  std::vector<UpsampleLayer<T>> ups;
  bool use_skips = false;

  static Decoder make(std::size_t in_channels, const std::vector<std::size_t>& widths,
                      const std::vector<std::size_t>& skip_channels, bool use_skips,
                      double dropout_rate, DropoutPlacement at, RngStream& rng) {
    if (widths.empty()) throw ConfigError("decoder needs at least one width");
    if (use_skips && skip_channels.size() != widths.size())
      throw ConfigError("decoder skips need one encoder skip per upsampling stage");
    Decoder d;
    d.use_skips = use_skips;
    std::size_t c = in_channels;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      d.blocks.push_back(ResidualBlock<T>::make(c, BlockConfig{widths[i], dropout_rate, at}, rng));
      d.ups.push_back(UpsampleLayer<T>::make(widths[i], rng));
      c = widths[i];
      if (use_skips) c += skip_channels[skip_channels.size() - 1 - i];
    }
    return d;
  }

  std::size_t out_channels(const std::vector<std::size_t>& skip_channels) const {
    std::size_t c = blocks.back().cfg.filters;
    if (use_skips) c += skip_channels.front();
    return c;
  }

  /// `skips` finest first, as produced by the encoder; ignored unless use_skips.
  Var<T> operator()(const Var<T>& f, const std::vector<Var<T>>& skips, bool training,
                    RngStream* rng) const {
    Var<T> h = f;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      h = ups[i](blocks[i](h, training, rng));
      if (use_skips) h = concat_last<T>({h, skips.at(skips.size() - 1 - i)});
    }
    return h;
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].collect(prefix + ".rrb" + std::to_string(i), out);
      ups[i].collect(prefix + ".up" + std::to_string(i), out);
    }
  }
};

/// Final 3x3x3 convolution to one channel with sigmoid activation.
template <class T>
struct OutputHead {
  Conv3d<T> conv;

  static OutputHead make(std::size_t in_channels, RngStream& rng) {
    return {Conv3d<T>::make(3, in_channels, 1, rng)};
  }
  Var<T> operator()(const Var<T>& x) const { return sigmoid(conv(x)); }
  void collect(const std::string& prefix, NamedParams<T>& out) const { conv.collect(prefix, out); }
};

}  // namespace meal
