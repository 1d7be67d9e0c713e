#pragma once

// The five model configurations: NA and TA (single stream), CC (concatenative
// fusion of four non-shared encoders), FL (concatenation + 1x1x1 fusion conv)
// and BD (shared encoder over in-graph augmentations with a softmax controller).

#include <array>
#include <cctype>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meal/augment.hpp"
#include "meal/backbone.hpp"

namespace meal {

enum class Variant { NA, TA, CC, FL, BD };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::NA: return "NA";
    case Variant::TA: return "TA";
    case Variant::CC: return "CC";
    case Variant::FL: return "FL";
    case Variant::BD: return "BD";
  }
  return "?";
}

inline Variant parse_variant(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Variant v : {Variant::NA, Variant::TA, Variant::CC, Variant::FL, Variant::BD})
    if (s == to_string(v)) return v;
  throw UsageError("unknown variant '" + s + "' (expected na, ta, cc, fl or bd)");
}

inline constexpr std::array<Variant, 5> kAllVariants{Variant::NA, Variant::TA, Variant::CC,
                                                     Variant::FL, Variant::BD};

/// Single-encoder variants use U-Net skips by default (for BD the skip
/// features are fused with the same attention weights as the bottleneck);
/// CC and FL fuse at the bottleneck only.
inline bool default_decoder_skips(Variant v) { return v != Variant::CC && v != Variant::FL; }

/// Number of input tensors forward() expects.
inline std::size_t input_arity(Variant v) {
  return (v == Variant::CC || v == Variant::FL) ? 4 : 1;
}

struct ModelConfig {
  Variant variant = Variant::NA;
  std::vector<std::size_t> encoder_widths{64, 128, 256};
  std::vector<std::size_t> decoder_widths{64, 128};  // application order
  std::size_t fuse_channels = 128;
  std::size_t controller_hidden = 64;
  Dims3 input_shape{128, 128, 64};
  Dims3 crop_shape{100, 100, 50};
  double dropout_rate = 0.2;
  DropoutPlacement dropout_at = DropoutPlacement::after_second_conv;
  bool decoder_skips = true;  // see default_decoder_skips
  bool align_streams = true;  // BD: undo flip/rot90 on stream features before fusion
  double flip_p = 0.5;
  ContrastMean contrast_mean = ContrastMean::original;

  /// Full-size network on 128x128x64 volumes.
  static ModelConfig full(Variant v) {
    ModelConfig c;
    c.variant = v;
    c.decoder_skips = default_decoder_skips(v);
    return c;
  }

  /// Desk-scale network: 32x32x16 volumes with a quarter of the channel widths.
  static ModelConfig desk(Variant v) {
    ModelConfig c = full(v);
    c.encoder_widths = {16, 32, 64};
    c.decoder_widths = {16, 32};
    c.input_shape = {32, 32, 16};
    c.crop_shape = {25, 25, 12};
    return c;
  }

  StreamConfig stream_config() const { return {crop_shape, flip_p, contrast_mean}; }

  void validate() const {
    if (encoder_widths.empty()) throw ConfigError("encoder_widths must not be empty");
    for (auto w : encoder_widths)
      if (w < 1) throw ConfigError("encoder widths must be positive");
    for (auto w : decoder_widths)
      if (w < 1) throw ConfigError("decoder widths must be positive");
    if (decoder_widths.size() + 1 != encoder_widths.size())
      throw ConfigError("need exactly one decoder width per pooling stage (" +
                        std::to_string(encoder_widths.size() - 1) + "), got " +
                        std::to_string(decoder_widths.size()));
    if (fuse_channels < 1 || controller_hidden < 1)
      throw ConfigError("fuse_channels and controller_hidden must be positive");
    if (decoder_skips && input_arity(variant) != 1)
      throw ConfigError("decoder skips are only defined for single-encoder variants");
    const std::size_t f = std::size_t{1} << (encoder_widths.size() - 1);
    if (input_shape.h % f || input_shape.w % f || input_shape.d % f)
      throw ConfigError("input shape " + dims_str(input_shape) + " must be divisible by " +
                        std::to_string(f));
    if (crop_shape.h < 1 || crop_shape.w < 1 || crop_shape.d < 1 ||
        crop_shape.h > input_shape.h || crop_shape.w > input_shape.w || crop_shape.d > input_shape.d)
      throw ConfigError("crop shape " + dims_str(crop_shape) + " must fit inside the input shape");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout_rate must lie in [0,1)");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"variant", to_string(c.variant)},
      {"encoder_widths", c.encoder_widths},
      {"decoder_widths", c.decoder_widths},
      {"fuse_channels", c.fuse_channels},
      {"controller_hidden", c.controller_hidden},
      {"input_shape", {c.input_shape.h, c.input_shape.w, c.input_shape.d}},
      {"crop_shape", {c.crop_shape.h, c.crop_shape.w, c.crop_shape.d}},
      {"dropout_rate", c.dropout_rate},
      {"dropout_at", c.dropout_at == DropoutPlacement::after_second_conv ? "second_conv" : "first_conv"},
      {"decoder_skips", c.decoder_skips},
      {"align_streams", c.align_streams},
      {"flip_p", c.flip_p},
      {"contrast_mean", c.contrast_mean == ContrastMean::original ? "original" : "shifted"}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto dims = [](const nlohmann::json& a) {
    if (!a.is_array() || a.size() != 3) throw ConfigError("expected a 3-element shape");
    return Dims3{a[0].get<std::size_t>(), a[1].get<std::size_t>(), a[2].get<std::size_t>()};
  };
  ModelConfig d;
  if (j.contains("variant")) d = ModelConfig::full(parse_variant(j.at("variant")));
  d.encoder_widths = j.value("encoder_widths", d.encoder_widths);
  d.decoder_widths = j.value("decoder_widths", d.decoder_widths);
  d.fuse_channels = j.value("fuse_channels", d.fuse_channels);
  d.controller_hidden = j.value("controller_hidden", d.controller_hidden);
  if (j.contains("input_shape")) d.input_shape = dims(j.at("input_shape"));
  if (j.contains("crop_shape")) d.crop_shape = dims(j.at("crop_shape"));
  d.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  if (j.contains("dropout_at"))
    d.dropout_at = j.at("dropout_at") == "first_conv" ? DropoutPlacement::after_first_conv
                                                      : DropoutPlacement::after_second_conv;
  d.decoder_skips = j.value("decoder_skips", d.decoder_skips);
  d.align_streams = j.value("align_streams", d.align_streams);
  d.flip_p = j.value("flip_p", d.flip_p);
  if (j.contains("contrast_mean"))
    d.contrast_mean = j.at("contrast_mean") == "shifted" ? ContrastMean::shifted : ContrastMean::original;
  c = d;
}

// ---------------------------------------------------------------- fusion

/// Channel-wise concatenation of the stream features in stream order.
template <class T>
FeatureMap<T> fuse_cc(const std::array<FeatureMap<T>, 4>& hs) {
  std::vector<Var<T>> parts;
  for (const auto& h : hs) parts.push_back(h.tensor);
  for (const auto& h : hs) {
    const auto& a = h.shape();
    const auto& b = hs[0].shape();
    if (a.size() != 5 || !std::equal(a.begin(), a.end() - 1, b.begin()))
      throw ShapeError("fuse_cc: stream feature maps differ in shape: " + shape_str(a) + " vs " +
                       shape_str(b));
  }
  return {concat_last(parts), -1, hs[0].level};
}

/// Concatenation followed by the 1x1x1 fusion convolution.
template <class T>
FeatureMap<T> fuse_fl(const std::array<FeatureMap<T>, 4>& hs, const Conv3d<T>& fuse) {
  FeatureMap<T> cat = fuse_cc(hs);
  return {fuse(cat.tensor), -1, cat.level};
}

/// alpha_k = softmax_k( w^T ReLU(W GAP(h_k)) ).
template <class T>
struct Controller {
  Var<T> W;  // (d, C)
  Var<T> w;  // (1, d)

  static Controller make(std::size_t channels, std::size_t hidden, RngStream& rng) {
    Controller c;
    c.W = Var<T>::parameter(glorot_uniform<T>(Shape{hidden, channels}, channels, hidden, rng));
    c.w = Var<T>::parameter(glorot_uniform<T>(Shape{1, hidden}, hidden, 1, rng));
    return c;
  }

  /// Unnormalised stream scores, (B, 4).
  Var<T> logits(const std::array<FeatureMap<T>, 4>& hs) const {
    std::vector<Var<T>> parts;
    for (const auto& h : hs) parts.push_back(linear(relu(linear(global_avg_pool(h.tensor), W)), w));
    return concat_last(parts);
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".W", W);
    out.emplace_back(prefix + ".w", w);
  }
};

template <class T>
Var<T> controller_alphas(const std::array<FeatureMap<T>, 4>& hs, const Controller<T>& ctl) {
  return softmax_last(ctl.logits(hs));
}

template <class T>
struct BdFusion {
  FeatureMap<T> fused;
  std::vector<Var<T>> fused_skips;       // finest first; empty unless requested
  Var<T> alphas;                         // (B, 4)
  std::array<FeatureMap<T>, 4> streams;  // f_theta(A_k(x))
};

/// Inverse of a flip or rot90 spec; nullopt for ops without an exact inverse
/// on feature maps (crop-resize) or without spatial effect (intensity).
inline std::optional<AugmentationSpec> spatial_inverse(const AugmentationSpec& spec) {
  if (spec.kind() == AugKind::flip) return spec;
  if (spec.kind() == AugKind::rot90) return AugmentationSpec::rot90(4 - std::get<Rot90Params>(spec.params).k);
  return std::nullopt;
}

/// F = sum_k alpha_k f(A_k(x)) with one shared encoder. With `fuse_skips` the
/// encoder features at every finer scale are mixed with the same weights.
/// With `align` the flip and rot90 stream features are mapped back to the
/// input frame before mixing, so every stream lines up with the target.
/// `forced_alpha`, when given, replaces the controller output (used to pin
/// the mixture in tests).
template <class T>
BdFusion<T> fuse_bd(const Var<T>& x, const StreamSpecs& specs, const Encoder<T>& encoder,
                    const Controller<T>& ctl, bool training, RngStream* rng,
                    const std::optional<Tensor<T>>& forced_alpha = std::nullopt,
                    bool fuse_skips = false, bool align = false) {
  BdFusion<T> r;
  std::array<std::vector<FeatureMap<T>>, 4> skips;
  for (std::size_t k = 0; k < 4; ++k) {
    auto e = encoder(augment(x, specs[k]), training, rng, static_cast<int>(k));
    if (const auto inv = align ? spatial_inverse(specs[k]) : std::nullopt) {
      e.bottleneck.tensor = augment(e.bottleneck.tensor, *inv);
      for (auto& s : e.skips) s.tensor = augment(s.tensor, *inv);
    }
    r.streams[k] = e.bottleneck;
    skips[k] = std::move(e.skips);
  }
  r.alphas = forced_alpha ? Var<T>::constant(*forced_alpha) : controller_alphas(r.streams, ctl);
  std::vector<Var<T>> hs;
  for (const auto& h : r.streams) hs.push_back(h.tensor);
  r.fused = {weighted_sum(hs, r.alphas), -1, r.streams[0].level};
  if (fuse_skips)
    for (std::size_t l = 0; l < skips[0].size(); ++l) {
      std::vector<Var<T>> level;
      for (std::size_t k = 0; k < 4; ++k) level.push_back(skips[k][l].tensor);
      r.fused_skips.push_back(weighted_sum(level, r.alphas));
    }
  return r;
}

// ---------------------------------------------------------------- model

template <class T>
struct ForwardOptions {
  bool training = false;
  RngStream* rng = nullptr;  // dropout and BD parameter sampling
  std::optional<StreamSpecs> stream_specs;  // BD in-graph parameters; sampled or identity if unset
  std::optional<Tensor<T>> forced_alpha;    // BD only
};

template <class T>
struct ForwardResult {
  Var<T> output;
  Var<T> alphas;  // BD only
  std::optional<StreamSpecs> stream_specs;  // BD only
};

struct ParamCount {
  std::size_t trainable = 0;
  std::size_t non_trainable = 0;
};

template <class T>
struct Model {
  ModelConfig config;
  std::vector<Encoder<T>> encoders;  // 1 (NA, TA, BD) or 4 (CC, FL)
  std::optional<Conv3d<T>> fuse;     // FL
  std::optional<Controller<T>> controller;  // BD
  Decoder<T> decoder;
  OutputHead<T> head;

  static Model build(const ModelConfig& cfg, RngStream& rng) {
    cfg.validate();
    Model m;
    m.config = cfg;
    const std::size_t n_enc = input_arity(cfg.variant);
    for (std::size_t i = 0; i < n_enc; ++i)
      m.encoders.push_back(
          Encoder<T>::make(1, cfg.encoder_widths, cfg.dropout_rate, cfg.dropout_at, rng));
    const std::size_t c = cfg.encoder_widths.back();
    std::size_t dec_in = c;
    if (cfg.variant == Variant::CC) dec_in = 4 * c;
    if (cfg.variant == Variant::FL) {
      m.fuse = Conv3d<T>::make(1, 4 * c, cfg.fuse_channels, rng);
      dec_in = cfg.fuse_channels;
    }
    if (cfg.variant == Variant::BD) m.controller = Controller<T>::make(c, cfg.controller_hidden, rng);
    std::vector<std::size_t> skip_ch(cfg.encoder_widths.begin(), cfg.encoder_widths.end() - 1);
    m.decoder = Decoder<T>::make(dec_in, cfg.decoder_widths, skip_ch, cfg.decoder_skips,
                                 cfg.dropout_rate, cfg.dropout_at, rng);
    m.head = OutputHead<T>::make(m.decoder.out_channels(skip_ch), rng);
    return m;
  }

  ForwardResult<T> forward(const std::vector<Var<T>>& inputs, const ForwardOptions<T>& opt = {}) const {
    const std::size_t arity = input_arity(config.variant);
    if (inputs.size() != arity)
      throw UsageError(std::string(to_string(config.variant)) + " expects " + std::to_string(arity) +
                       " input tensor(s), got " + std::to_string(inputs.size()));
    ForwardResult<T> r;
    FeatureMap<T> fused;
    std::vector<Var<T>> skips;
    switch (config.variant) {
      case Variant::NA:
      case Variant::TA: {
        auto e = encoders[0](inputs[0], opt.training, opt.rng);
        fused = e.bottleneck;
        for (auto& s : e.skips) skips.push_back(s.tensor);
        break;
      }
      case Variant::CC:
      case Variant::FL: {
        std::array<FeatureMap<T>, 4> hs;
        for (std::size_t k = 0; k < 4; ++k)
          hs[k] = encoders[k](inputs[k], opt.training, opt.rng, static_cast<int>(k)).bottleneck;
        fused = config.variant == Variant::CC ? fuse_cc(hs) : fuse_fl(hs, *fuse);
        break;
      }
      case Variant::BD: {
        StreamSpecs specs;
        if (opt.stream_specs) {
          specs = *opt.stream_specs;
        } else if (opt.training) {
          if (!opt.rng) throw UsageError("BD training forward needs an RngStream");
          specs = sample_stream_specs(*opt.rng, config.stream_config());
        } else {
          specs = identity_stream_specs(aug::spatial(inputs[0].shape()));
        }
        auto bd = fuse_bd(inputs[0], specs, encoders[0], *controller, opt.training, opt.rng,
                          opt.forced_alpha, config.decoder_skips, config.align_streams);
        fused = bd.fused;
        skips = bd.fused_skips;
        r.alphas = bd.alphas;
        r.stream_specs = specs;
        break;
      }
    }
    r.output = head(decoder(fused.tensor, skips, opt.training, opt.rng));
    return r;
  }

  /// Convenience overload taking raw tensors.
  ForwardResult<T> forward(const std::vector<Tensor<T>>& inputs, const ForwardOptions<T>& opt = {}) const {
    std::vector<Var<T>> vs;
    for (const auto& t : inputs) vs.push_back(Var<T>::constant(t));
    return forward(vs, opt);
  }

  NamedParams<T> parameters() const {
    NamedParams<T> out;
    for (std::size_t i = 0; i < encoders.size(); ++i)
      encoders[i].collect("encoder" + std::to_string(i), out);
    if (fuse) fuse->collect("fuse", out);
    if (controller) controller->collect("controller", out);
    decoder.collect("decoder", out);
    head.collect("head", out);
    return out;
  }

  ParamCount count_params() const {
    ParamCount c;
    for (const auto& [name, p] : parameters())
      (p.requires_grad() ? c.trainable : c.non_trainable) += p.value().size();
    return c;
  }
};

/// Published trainable-parameter count of the single-stream network.
inline constexpr std::size_t kReferenceNaParams = 4428545;

/// One-paragraph comparison of a trainable-parameter count against a
/// published reference, with the reasons an exact match is not expected.
inline std::string param_count_note(std::size_t ours, std::size_t reference, bool full_scale) {
  std::ostringstream os;
  os << "NA trainable parameters: " << ours << " (reference " << reference << "): ";
  if (ours == reference) {
    os << "MATCH";
    return os.str();
  }
  const double rel = (static_cast<double>(ours) - static_cast<double>(reference)) / static_cast<double>(reference);
  os << "DEVIATION " << std::showpos << std::fixed << std::setprecision(1) << 100.0 * rel << "%" << std::noshowpos;
  os << (full_scale ? "" : " (desk-scale widths; compare with --scale full)") << ".\n"
     << "The reference figure cannot be reproduced from the published description: it gives the encoder\n"
     << "widths (64-128-256) and the residual-block layout but not the kernel size of every\n"
     << "convolution, the upsampling kernel, whether encoder features reach the decoder, or the output\n"
     << "head. This build uses 3x3x3 kernels in the residual blocks with 1x1x1 projections where widths\n"
     << "change, nearest-neighbour x2 upsampling followed by a 2x2x2 transposed convolution, encoder\n"
     << "features concatenated after each upsampling (single-encoder variants), and a 3x3x3 sigmoid\n"
     << "head; each of these choices shifts the count.";
  return os.str();
}

}  // namespace meal
