#pragma once

// Synthetic paired head phantoms for desk-scale experiments.
//
// The clean source is a head ellipsoid (elongated along H) at the "white" level
// with several inner "gray" ellipsoids. The target is the fixed map
//   g(S) = clamp(m(S) + edge_gain * min(|grad S|, edge_cap) + shift_gain * dS/dh, 0, 1),
//   m(s) = out_max * (1 - exp(-gain s)) / (1 - exp(-gain)),
// where derivatives are central differences with replicated borders. The
// signed dS/dh term mimics a chemical-shift band along the readout axis (H),
// so the mapping depends on orientation.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "meal/rng.hpp"
#include "meal/volume.hpp"

namespace meal {

namespace phantom {
inline constexpr double kWhiteLevel = 0.4;
inline constexpr double kGrayLevel = 0.7;
inline constexpr double kNoiseSd = 0.02;
inline constexpr double kRemapGain = 3.0;
inline constexpr double kRemapMax = 0.8;
inline constexpr double kEdgeGain = 0.4;
inline constexpr double kEdgeCap = 0.5;
inline constexpr double kShiftGain = 1.0;
// Prediction threshold separating the gray-level target from the white level.
inline constexpr double kGrayThreshold = 0.66;
}  // namespace phantom

/// Monotone intensity remap m(s).
inline double phantom_remap(double s) {
  using namespace phantom;
  return kRemapMax * (1.0 - std::exp(-kRemapGain * s)) / (1.0 - std::exp(-kRemapGain));
}

/// Target volume g(clean) for a clean phantom source.
inline Volume phantom_target(const Volume& clean) {
  const Dims3 s = clean.dims();
  Volume t(s, 0.0f, IntensityUnits::normalized);
  auto c = [](std::size_t i, std::ptrdiff_t o, std::size_t n) {
    const auto j = static_cast<std::ptrdiff_t>(i) + o;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t h = 0; h < s.h; ++h)
    for (std::size_t w = 0; w < s.w; ++w)
      for (std::size_t d = 0; d < s.d; ++d) {
        const double gh = 0.5 * (clean.at(c(h, 1, s.h), w, d) - clean.at(c(h, -1, s.h), w, d));
        const double gw = 0.5 * (clean.at(h, c(w, 1, s.w), d) - clean.at(h, c(w, -1, s.w), d));
        const double gd = 0.5 * (clean.at(h, w, c(d, 1, s.d)) - clean.at(h, w, c(d, -1, s.d)));
        const double mag = std::sqrt(gh * gh + gw * gw + gd * gd);
        const double v = phantom_remap(clean.at(h, w, d)) +
                         phantom::kEdgeGain * std::min(mag, phantom::kEdgeCap) +
                         phantom::kShiftGain * gh;
        t.at(h, w, d) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return t;
}

struct PhantomParts {
  Volume clean;  // noise-free source
  Volume mask;   // gray ellipsoid union
};

namespace detail {
struct Ellipsoid {
  double ch, cw, cd, rh, rw, rd;
  bool contains(double h, double w, double d) const {
    const double a = (h - ch) / rh, b = (w - cw) / rw, c = (d - cd) / rd;
    return a * a + b * b + c * c <= 1.0;
  }
};
}  // namespace detail

/// Noise-free source and mask; a pure function of (seed, shape).
inline PhantomParts make_phantom_parts(std::uint64_t seed, Dims3 shape) {
  if (shape.h < 8 || shape.w < 8 || shape.d < 8)
    throw ParameterError("make_phantom_pair: every dim must be >= 8, got " + dims_str(shape));
  RngStream rng(seed, 0);
  RngStream geo = rng.fork("geometry");
  const double H = shape.h, W = shape.w, D = shape.d;
  const detail::Ellipsoid head{(H - 1) / 2 + geo.uniform(-H / 16, H / 16),
                               (W - 1) / 2 + geo.uniform(-W / 16, W / 16),
                               (D - 1) / 2 + geo.uniform(-D / 16, D / 16),
                               H * geo.uniform(0.40, 0.45), W * geo.uniform(0.30, 0.34),
                               D * geo.uniform(0.38, 0.44)};
  std::vector<detail::Ellipsoid> blobs;
  const std::size_t n_blobs = 4 + geo.below(4);
  while (blobs.size() < n_blobs) {
    // Centre drawn in head-normalised coordinates, kept well inside the head.
    const double u = geo.uniform(-0.6, 0.6), v = geo.uniform(-0.6, 0.6), t = geo.uniform(-0.5, 0.5);
    if (u * u + v * v + t * t > 0.36) continue;
    blobs.push_back({head.ch + u * head.rh, head.cw + v * head.rw, head.cd + t * head.rd,
                     H * geo.uniform(0.07, 0.14), W * geo.uniform(0.07, 0.14),
                     D * geo.uniform(0.10, 0.20)});
  }
  PhantomParts p{Volume(shape, 0.0f, IntensityUnits::normalized),
                 Volume(shape, 0.0f, IntensityUnits::normalized)};
  for (std::size_t h = 0; h < shape.h; ++h)
    for (std::size_t w = 0; w < shape.w; ++w)
      for (std::size_t d = 0; d < shape.d; ++d) {
        if (!head.contains(h, w, d)) continue;
        bool gray = false;
        for (const auto& b : blobs) gray = gray || b.contains(h, w, d);
        p.clean.at(h, w, d) = static_cast<float>(gray ? phantom::kGrayLevel : phantom::kWhiteLevel);
        p.mask.at(h, w, d) = gray ? 1.0f : 0.0f;
      }
  return p;
}

/// Paired phantom: noisy source, remapped target, gray-matter mask.
inline PairedSample make_phantom_pair(std::uint64_t seed, Dims3 shape) {
  PhantomParts parts = make_phantom_parts(seed, shape);
  RngStream noise = RngStream(seed, 0).fork("noise");
  PairedSample s;
  s.id = "phantom_" + std::to_string(seed);
  s.source = parts.clean;
  for (float& v : s.source.data.vec())
    v = static_cast<float>(std::clamp(v + phantom::kNoiseSd * noise.normal(), 0.0, 1.0));
  s.target = phantom_target(parts.clean);
  s.mask = std::move(parts.mask);
  return s;
}

}  // namespace meal
