#pragma once

// The four stream augmentations (flip, planar rot90, centre crop + resize,
// intensity perturbation). Each exists as a pure tensor function with
// explicit parameters, as a sampler drawing parameters from an RngStream,
// and as a differentiable graph op with the parameters held fixed.

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <variant>

#include <nlohmann/json.hpp>

#include "meal/autograd.hpp"
#include "meal/interp.hpp"
#include "meal/rng.hpp"

namespace meal {

enum class AugKind { flip, rot90, crop_resize, intensity };

inline const char* to_string(AugKind k) {
  switch (k) {
    case AugKind::flip: return "flip";
    case AugKind::rot90: return "rot90";
    case AugKind::crop_resize: return "crop_resize";
    case AugKind::intensity: return "intensity";
  }
  return "?";
}

struct FlipParams {
  double b_h = 0.0, b_w = 0.0;  // raw draws, kept for provenance
  bool flip_h = false, flip_w = false;
};
struct Rot90Params {
  int k = 0;
};
struct CropParams {
  Dims3 crop;
};
/// Which mean the contrast step pulls towards.
enum class ContrastMean { original, shifted };
struct IntensityParams {
  double delta = 0.0;
  double alpha = 1.0;
  ContrastMean mean_of = ContrastMean::original;
};

struct AugmentationSpec {
  std::variant<FlipParams, Rot90Params, CropParams, IntensityParams> params;
  bool sampled = false;

  AugKind kind() const { return static_cast<AugKind>(params.index()); }

  static AugmentationSpec flip(bool h, bool w) {
    return {FlipParams{h ? 1.0 : 0.0, w ? 1.0 : 0.0, h, w}, false};
  }
  static AugmentationSpec rot90(int k) { return {Rot90Params{((k % 4) + 4) % 4}, false}; }
  static AugmentationSpec crop_resize(Dims3 c) { return {CropParams{c}, false}; }
  static AugmentationSpec intensity(double delta, double alpha,
                                    ContrastMean m = ContrastMean::original) {
    return {IntensityParams{delta, alpha, m}, false};
  }
  /// Parameters that make the op an identity on a volume of the given extent.
  static AugmentationSpec identity(AugKind kind, Dims3 extent) {
    switch (kind) {
      case AugKind::flip: return flip(false, false);
      case AugKind::rot90: return rot90(0);
      case AugKind::crop_resize: return crop_resize(extent);
      case AugKind::intensity: return intensity(0.0, 1.0);
    }
    return flip(false, false);
  }
};

inline void to_json(nlohmann::json& j, const AugmentationSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind())}, {"sampled", s.sampled}};
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, FlipParams>)
          j["params"] = {{"b_h", p.b_h}, {"b_w", p.b_w}, {"flip_h", p.flip_h}, {"flip_w", p.flip_w}};
        else if constexpr (std::is_same_v<P, Rot90Params>)
          j["params"] = {{"k", p.k}};
        else if constexpr (std::is_same_v<P, CropParams>)
          j["params"] = {{"crop", {p.crop.h, p.crop.w, p.crop.d}}};
        else
          j["params"] = {{"delta", p.delta},
                         {"alpha", p.alpha},
                         {"mean_of", p.mean_of == ContrastMean::original ? "original" : "shifted"}};
      },
      s.params);
}

inline void from_json(const nlohmann::json& j, AugmentationSpec& s) {
  const std::string kind = j.at("kind");
  const auto& p = j.at("params");
  if (kind == "flip")
    s.params = FlipParams{p.at("b_h"), p.at("b_w"), p.at("flip_h"), p.at("flip_w")};
  else if (kind == "rot90")
    s.params = Rot90Params{p.at("k")};
  else if (kind == "crop_resize")
    s.params = CropParams{Dims3{p.at("crop")[0], p.at("crop")[1], p.at("crop")[2]}};
  else if (kind == "intensity")
    s.params = IntensityParams{p.at("delta"), p.at("alpha"),
                               p.value("mean_of", std::string("original")) == "shifted"
                                   ? ContrastMean::shifted
                                   : ContrastMean::original};
  else
    throw ParameterError("unknown augmentation kind '" + kind + "'");
  s.sampled = j.value("sampled", false);
}

// ---------------------------------------------------------------- tensor level

namespace aug {

/// Reverses axis H (axis 1) and/or W (axis 2).
template <class T>
Tensor<T> flip(const Tensor<T>& x, bool flip_h, bool flip_w) {
  require_rank5(x, "flip");
  if (!flip_h && !flip_w) return x;
  const auto& s = x.shape();
  const std::size_t H = s[1], W = s[2], run = s[3] * s[4];
  Tensor<T> out(s);
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const std::size_t sh = flip_h ? H - 1 - h : h;
        const std::size_t sw = flip_w ? W - 1 - w : w;
        std::copy_n(x.data() + x.index5(b, sh, sw, 0, 0), run, out.data() + out.index5(b, h, w, 0, 0));
      }
  return out;
}

/// Rotates every depth slice by k * 90 degrees in the H-W plane
/// (counter-clockwise, out[i][j] = in[j][W-1-i] for k = 1).
template <class T>
Tensor<T> rot90(const Tensor<T>& x, int k) {
  require_rank5(x, "rot90");
  const auto& s = x.shape();
  if (s[1] != s[2])
    throw ShapeError("rot90: in-plane extent must be square, got " + shape_str(s));
  k = ((k % 4) + 4) % 4;
  if (k == 0) return x;
  const std::size_t N = s[1], run = s[3] * s[4];
  Tensor<T> out(s);
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        std::size_t si = 0, sj = 0;
        switch (k) {
          case 1: si = j, sj = N - 1 - i; break;
          case 2: si = N - 1 - i, sj = N - 1 - j; break;
          default: si = N - 1 - j, sj = i; break;
        }
        std::copy_n(x.data() + x.index5(b, si, sj, 0, 0), run, out.data() + out.index5(b, i, j, 0, 0));
      }
  return out;
}

inline std::array<AxisMap, 3> crop_resize_maps(Dims3 extent, Dims3 crop) {
  if (crop.h < 1 || crop.w < 1 || crop.d < 1 || crop.h > extent.h || crop.w > extent.w ||
      crop.d > extent.d)
    throw ParameterError("center_crop_resize: crop " + dims_str(crop) + " does not fit in " +
                         dims_str(extent));
  return {make_axis_map(extent.h, (extent.h - crop.h) / 2, crop.h, extent.h),
          make_axis_map(extent.w, (extent.w - crop.w) / 2, crop.w, extent.w),
          make_axis_map(extent.d, (extent.d - crop.d) / 2, crop.d, extent.d)};
}

inline Dims3 spatial(const Shape& s) { return {s[1], s[2], s[3]}; }

/// Crops the centred block of size `crop` (offsets floor((N - N_c) / 2)) and
/// resizes it back to the input extent with linear interpolation on every axis.
template <class T>
Tensor<T> center_crop_resize(const Tensor<T>& x, Dims3 crop) {
  require_rank5(x, "center_crop_resize");
  const Dims3 ext = spatial(x.shape());
  const auto maps = crop_resize_maps(ext, crop);
  if (crop == ext) return x;
  return interp_separable(x, maps);
}

/// X'' = alpha (X + delta) + (1 - alpha) mu, with mu the per-sample mean of X
/// (or of X + delta when configured so). No clamping.
template <class T>
Tensor<T> intensity(const Tensor<T>& x, const IntensityParams& p) {
  require_rank5(x, "intensity");
  Tensor<T> out = x;
  const std::size_t B = x.dim(0), per = x.size() / B;
  for (std::size_t b = 0; b < B; ++b) {
    T* v = out.data() + b * per;
    T mu{0};
    for (std::size_t i = 0; i < per; ++i) mu += v[i];
    mu /= static_cast<T>(per);
    if (p.mean_of == ContrastMean::shifted) mu += static_cast<T>(p.delta);
    const T a = static_cast<T>(p.alpha), dl = static_cast<T>(p.delta);
    for (std::size_t i = 0; i < per; ++i) v[i] = a * (v[i] + dl) + (T{1} - a) * mu;
  }
  return out;
}

template <class T>
Tensor<T> apply(const Tensor<T>& x, const AugmentationSpec& spec) {
  return std::visit(
      [&](const auto& p) -> Tensor<T> {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, FlipParams>)
          return flip(x, p.flip_h, p.flip_w);
        else if constexpr (std::is_same_v<P, Rot90Params>)
          return rot90(x, p.k);
        else if constexpr (std::is_same_v<P, CropParams>)
          return center_crop_resize(x, p.crop);
        else
          return intensity(x, p);
      },
      spec.params);
}

// ---------------------------------------------------------------- samplers

/// Two uniform draws; an axis is flipped when its draw exceeds 1 - p.
inline AugmentationSpec sample_flip(RngStream& rng, double p = 0.5) {
  FlipParams f;
  f.b_h = rng.uniform();
  f.b_w = rng.uniform();
  f.flip_h = f.b_h > 1.0 - p;
  f.flip_w = f.b_w > 1.0 - p;
  return {f, true};
}

inline AugmentationSpec sample_rot90(RngStream& rng) {
  return {Rot90Params{static_cast<int>(rng.below(4))}, true};
}

inline AugmentationSpec sample_intensity(RngStream& rng, ContrastMean m = ContrastMean::original) {
  IntensityParams p;
  p.delta = rng.uniform(-0.1, 0.1);
  p.alpha = rng.uniform(0.9, 1.1);
  p.mean_of = m;
  return {p, true};
}

template <class T>
std::pair<Tensor<T>, AugmentationSpec> random_flip(const Tensor<T>& x, RngStream& rng, double p = 0.5) {
  auto spec = sample_flip(rng, p);
  return {apply(x, spec), spec};
}

template <class T>
std::pair<Tensor<T>, AugmentationSpec> random_rot90(const Tensor<T>& x, RngStream& rng) {
  auto spec = sample_rot90(rng);
  return {apply(x, spec), spec};
}

template <class T>
std::pair<Tensor<T>, AugmentationSpec> intensity_perturb(const Tensor<T>& x, RngStream& rng,
                                                         ContrastMean m = ContrastMean::original) {
  auto spec = sample_intensity(rng, m);
  return {apply(x, spec), spec};
}

}  // namespace aug

// ---------------------------------------------------------------- streams

/// Fixed stream order shared by the CC, FL and BD variants.
inline constexpr std::array<AugKind, 4> kStreamOrder{AugKind::flip, AugKind::rot90,
                                                     AugKind::crop_resize, AugKind::intensity};

struct StreamConfig {
  Dims3 crop{25, 25, 12};
  double flip_p = 0.5;
  ContrastMean contrast_mean = ContrastMean::original;
};

using StreamSpecs = std::array<AugmentationSpec, 4>;

inline StreamSpecs sample_stream_specs(RngStream& rng, const StreamConfig& cfg) {
  return {aug::sample_flip(rng, cfg.flip_p), aug::sample_rot90(rng),
          AugmentationSpec{CropParams{cfg.crop}, false}, aug::sample_intensity(rng, cfg.contrast_mean)};
}

inline StreamSpecs identity_stream_specs(Dims3 extent) {
  StreamSpecs s;
  for (std::size_t k = 0; k < 4; ++k) s[k] = AugmentationSpec::identity(kStreamOrder[k], extent);
  return s;
}

template <class T>
struct StreamViews {
  std::array<Tensor<T>, 4> views;
  StreamSpecs specs;
};

template <class T>
StreamViews<T> apply_stream_specs(const Tensor<T>& x, const StreamSpecs& specs) {
  StreamViews<T> out;
  out.specs = specs;
  for (std::size_t k = 0; k < 4; ++k) out.views[k] = aug::apply(x, specs[k]);
  return out;
}

/// One augmentation kind per stream, in kStreamOrder.
template <class T>
StreamViews<T> make_stream_views(const Tensor<T>& x, RngStream& rng, const StreamConfig& cfg) {
  return apply_stream_specs(x, sample_stream_specs(rng, cfg));
}

// ---------------------------------------------------------------- graph ops

/// Differentiable augmentation with the parameters in `spec` held fixed.
template <class T>
Var<T> augment(const Var<T>& x, const AugmentationSpec& spec) {
  Tensor<T> y = aug::apply(x.value(), spec);
  switch (spec.kind()) {
    case AugKind::flip: {
      const auto p = std::get<FlipParams>(spec.params);
      return make_result<T>(std::move(y), {x}, [p](Node<T>& self) {
        self.inputs[0]->accumulate(aug::flip(self.grad, p.flip_h, p.flip_w));
      });
    }
    case AugKind::rot90: {
      const int k = std::get<Rot90Params>(spec.params).k;
      return make_result<T>(std::move(y), {x}, [k](Node<T>& self) {
        self.inputs[0]->accumulate(aug::rot90(self.grad, 4 - k));
      });
    }
    case AugKind::crop_resize: {
      const auto maps = aug::crop_resize_maps(aug::spatial(x.shape()),
                                              std::get<CropParams>(spec.params).crop);
      return make_result<T>(std::move(y), {x}, [maps](Node<T>& self) {
        self.inputs[0]->accumulate(interp_separable_transpose(self.grad, maps));
      });
    }
    case AugKind::intensity: {
      const T a = static_cast<T>(std::get<IntensityParams>(spec.params).alpha);
      return make_result<T>(std::move(y), {x}, [a](Node<T>& self) {
        // d out_i / d x_j = a [i == j] + (1 - a) / N  (per sample)
        Tensor<T> g = self.grad;
        const std::size_t B = g.dim(0), per = g.size() / B;
        for (std::size_t b = 0; b < B; ++b) {
          T* v = g.data() + b * per;
          T sum{0};
          for (std::size_t i = 0; i < per; ++i) sum += v[i];
          const T shift = (T{1} - a) * sum / static_cast<T>(per);
          for (std::size_t i = 0; i < per; ++i) v[i] = a * v[i] + shift;
        }
        self.inputs[0]->accumulate(std::move(g));
      });
    }
  }
  throw ParameterError("augment: unknown kind");
}

}  // namespace meal
