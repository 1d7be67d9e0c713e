#pragma once

// Scalar volumes, paired samples and intensity preprocessing.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "meal/interp.hpp"
#include "meal/tensor.hpp"

namespace meal {

enum class IntensityUnits { hu, normalized, arbitrary };

inline std::string to_string(IntensityUnits u) {
  switch (u) {
    case IntensityUnits::hu: return "HU";
    case IntensityUnits::normalized: return "normalized";
    case IntensityUnits::arbitrary: return "arbitrary";
  }
  return "arbitrary";
}

/// A 3-D scalar grid stored as an (H, W, D) float tensor, D fastest.
struct Volume {
  Tensor<float> data;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm
  IntensityUnits units = IntensityUnits::arbitrary;
  // Voxel-to-world rows (srow_x, srow_y, srow_z) as read from file; never resampled.
  std::optional<std::array<std::array<double, 4>, 3>> affine;

  Volume() = default;
  Volume(Dims3 s, float fill = 0.0f, IntensityUnits u = IntensityUnits::arbitrary)
      : data(Shape{s.h, s.w, s.d}, fill), units(u) {
    if (s.h < 1 || s.w < 1 || s.d < 1) throw ShapeError("volume dims must be >= 1");
  }

  Dims3 dims() const { return {data.dim(0), data.dim(1), data.dim(2)}; }
  std::size_t size() const { return data.size(); }
  float& at(std::size_t h, std::size_t w, std::size_t d) {
    return data[(h * data.dim(1) + w) * data.dim(2) + d];
  }
  float at(std::size_t h, std::size_t w, std::size_t d) const {
    return data[(h * data.dim(1) + w) * data.dim(2) + d];
  }
  bool same_shape(const Volume& o) const { return data.shape() == o.data.shape(); }
};

/// Aligned source/target pair with an optional binary mask.
struct PairedSample {
  std::string id;
  Volume source;
  Volume target;
  std::optional<Volume> mask;

  Dims3 dims() const { return source.dims(); }
};

inline void validate_sample(const PairedSample& s) {
  if (!s.source.same_shape(s.target))
    throw ShapeError("sample '" + s.id + "': source " + dims_str(s.source.dims()) +
                     " and target " + dims_str(s.target.dims()) + " differ");
  if (s.mask) {
    if (!s.mask->same_shape(s.source))
      throw ShapeError("sample '" + s.id + "': mask shape does not match the volumes");
    for (float v : s.mask->data.vec())
      if (v != 0.0f && v != 1.0f)
        throw ParameterError("sample '" + s.id + "': mask contains non-binary values");
  }
}

/// Volume as a (1, H, W, D, 1) tensor.
template <class T>
Tensor<T> to_tensor5(const Volume& v) {
  const Dims3 s = v.dims();
  return v.data.template cast<T>().reshaped(Shape{1, s.h, s.w, s.d, 1});
}

/// Sample `b` of a (B, H, W, D, 1) tensor as a volume.
template <class T>
Volume from_tensor5(const Tensor<T>& t, std::size_t b = 0,
                    IntensityUnits u = IntensityUnits::normalized) {
  require_rank5(t, "from_tensor5");
  if (t.dim(4) != 1) throw ShapeError("from_tensor5: expected a single channel");
  Volume v(Dims3{t.dim(1), t.dim(2), t.dim(3)}, 0.0f, u);
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<float>(t[b * n + i]);
  return v;
}

/// Trilinear resampling to `target` with pixel-centre grid alignment.
inline Volume resample_trilinear(const Volume& vol, Dims3 target) {
  if (target.h < 1 || target.w < 1 || target.d < 1)
    throw ParameterError("resample_trilinear: target dims must be >= 1");
  const Dims3 s = vol.dims();
  if (s == target) return vol;
  const std::array<AxisMap, 3> maps{make_axis_map(s.h, 0, s.h, target.h),
                                    make_axis_map(s.w, 0, s.w, target.w),
                                    make_axis_map(s.d, 0, s.d, target.d)};
  // Interpolate in double so the convex-combination bound holds to rounding.
  Tensor<double> out = interp_separable(to_tensor5<double>(vol), maps);
  Volume r = from_tensor5(out, 0, vol.units);
  const std::array<double, 3> ratio{double(s.h) / target.h, double(s.w) / target.w,
                                    double(s.d) / target.d};
  for (int a = 0; a < 3; ++a) r.spacing[a] = vol.spacing[a] * ratio[a];
  r.affine = vol.affine;
  return r;
}

/// Linear window [level - width/2, level + width/2] -> [0, 1], clamped.
inline Volume hu_window(const Volume& vol, double level = 40.0, double width = 80.0) {
  if (!(width > 0.0)) throw ParameterError("hu_window: width must be positive");
  if (vol.units != IntensityUnits::hu)
    throw ParameterError("hu_window: input must be in HU (got " + to_string(vol.units) + ")");
  Volume r = vol;
  const double lo = level - width / 2.0;
  for (float& v : r.data.vec()) v = static_cast<float>(std::clamp((v - lo) / width, 0.0, 1.0));
  r.units = IntensityUnits::normalized;
  return r;
}

/// Per-volume min-max scaling to [0, 1]; a constant volume maps to zeros.
inline Volume normalize_intensity(const Volume& vol) {
  if (!vol.data.all_finite()) throw ParameterError("normalize_intensity: non-finite input");
  Volume r = vol;
  const double lo = vol.data.min(), hi = vol.data.max();
  const double range = hi - lo;
  for (float& v : r.data.vec())
    v = range > 0.0 ? static_cast<float>(std::clamp((v - lo) / range, 0.0, 1.0)) : 0.0f;
  r.units = IntensityUnits::normalized;
  return r;
}

}  // namespace meal
