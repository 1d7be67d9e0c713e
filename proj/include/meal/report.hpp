#pragma once

// Report figures: central-slice error heatmaps on a shared colour scale,
// signed pixel-difference histograms, PSNR/SSIM boxplots and per-sample BD
// stream-weight bars. Figures are plain RGB PNGs without timestamps, so the
// bytes depend only on the inputs; each carries the run digest in a tEXt chunk.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <png.h>

#include "meal/metrics.hpp"
#include "meal/volume.hpp"

namespace meal {

struct Rgb {
  std::uint8_t r = 255, g = 255, b = 255;
};

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<Rgb> px;

  Image(std::size_t w, std::size_t h, Rgb fill = {}) : width(w), height(h), px(w * h, fill) {}
  Rgb& at(std::size_t x, std::size_t y) { return px[y * width + x]; }
  const Rgb& at(std::size_t x, std::size_t y) const { return px[y * width + x]; }

  void fill_rect(long x0, long y0, long x1, long y1, Rgb c) {
    x0 = std::max(x0, 0L), y0 = std::max(y0, 0L);
    x1 = std::min(x1, static_cast<long>(width)), y1 = std::min(y1, static_cast<long>(height));
    for (long y = y0; y < y1; ++y)
      for (long x = x0; x < x1; ++x) at(x, y) = c;
  }
  void hline(long x0, long x1, long y, Rgb c) { fill_rect(std::min(x0, x1), y, std::max(x0, x1) + 1, y + 1, c); }
  void vline(long x, long y0, long y1, Rgb c) { fill_rect(x, std::min(y0, y1), x + 1, std::max(y0, y1) + 1, c); }
  void frame(long x0, long y0, long x1, long y1, Rgb c) {
    hline(x0, x1 - 1, y0, c);
    hline(x0, x1 - 1, y1 - 1, c);
    vline(x0, y0, y1 - 1, c);
    vline(x1 - 1, y0, y1 - 1, c);
  }
};

inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrey{160, 160, 160};

/// Black-red-yellow-white ramp for t in [0, 1].
inline Rgb heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto ch = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  return {ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)};
}

inline Rgb gray_color(double t) {
  const auto v = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
  return {v, v, v};
}

/// Fixed per-method palette (cycled).
inline Rgb series_color(std::size_t i) {
  static constexpr std::array<Rgb, 6> p{{{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                                         {214, 39, 40}, {148, 103, 189}, {140, 86, 75}}};
  return p[i % p.size()];
}

inline void write_png(const std::string& path, const Image& img,
                      const std::map<std::string, std::string>& text = {}) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing '" + path + "'");
  }
  png_init_io(png, fp);
  png_set_compression_level(png, 9);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<std::string> keys, vals;
  for (const auto& [k, v] : text) keys.push_back(k), vals.push_back(v);
  std::vector<png_text> chunks(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = keys[i].data();
    chunks[i].text = vals[i].data();
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  std::vector<std::uint8_t> row(img.width * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const Rgb& c = img.at(x, y);
      row[3 * x] = c.r, row[3 * x + 1] = c.g, row[3 * x + 2] = c.b;
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

/// Reads an 8-bit RGB PNG (as written above) plus its text chunks.
inline Image read_png(const std::string& path, std::map<std::string, std::string>* text = nullptr) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng failed reading '" + path + "'");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError(path + ": expected 8-bit RGB");
  }
  Image img(png_get_image_width(png, info), png_get_image_height(png, info));
  std::vector<std::uint8_t> row(img.width * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (std::size_t x = 0; x < img.width; ++x) img.at(x, y) = {row[3 * x], row[3 * x + 1], row[3 * x + 2]};
  }
  png_read_end(png, info);
  if (text) {
    png_textp t = nullptr;
    int n = 0;
    png_get_text(png, info, &t, &n);
    for (int i = 0; i < n; ++i) (*text)[t[i].key] = t[i].text;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// ---------------------------------------------------------------- data

inline constexpr std::size_t kHistogramBins = 101;

/// Signed differences pred - target binned over [-1, 1] in 101 equal bins
/// (bin 50 is centred on zero). Values outside the range go to the end bins.
struct Histogram {
  std::vector<std::uint64_t> counts = std::vector<std::uint64_t>(kHistogramBins, 0);

  static double bin_width() { return 2.0 / static_cast<double>(kHistogramBins); }
  static std::size_t bin_of(double v) {
    const double b = std::floor((v + 1.0) / bin_width());
    return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(kHistogramBins - 1)));
  }
  static double bin_center(std::size_t i) { return -1.0 + (static_cast<double>(i) + 0.5) * bin_width(); }
  void add(double v) { ++counts[bin_of(v)]; }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

inline void require_same_shape(const Volume& pred, const Volume& target, const std::string& what) {
  if (!pred.same_shape(target))
    throw ShapeError(what + ": shape mismatch, prediction " + dims_str(pred.dims()) + " vs target " + dims_str(target.dims()));
}

inline Histogram difference_histogram(const std::vector<Volume>& preds, const std::vector<Volume>& targets) {
  Histogram h;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require_same_shape(preds[i], targets[i], "difference_histogram");
    for (std::size_t k = 0; k < preds[i].data.size(); ++k)
      h.add(static_cast<double>(preds[i].data[k]) - static_cast<double>(targets[i].data[k]));
  }
  return h;
}

/// |pred - target| on axial slice `d` as a (H, W) row-major array.
inline std::vector<double> abs_error_slice(const Volume& pred, const Volume& target, std::size_t d) {
  require_same_shape(pred, target, "abs_error_slice");
  const Dims3 s = pred.dims();
  if (d >= s.d) throw ParameterError("slice index " + std::to_string(d) + " out of range");
  std::vector<double> out(s.h * s.w);
  for (std::size_t h = 0; h < s.h; ++h)
    for (std::size_t w = 0; w < s.w; ++w)
      out[h * s.w + w] = std::abs(static_cast<double>(pred.at(h, w, d)) - target.at(h, w, d));
  return out;
}

/// Quartiles with linear interpolation between order statistics.
struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, whisker_lo = 0, whisker_hi = 0;
  std::vector<double> outliers;
};

inline double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline BoxStats box_stats(std::vector<double> v) {
  if (v.empty()) throw ParameterError("box_stats: no values");
  std::sort(v.begin(), v.end());
  BoxStats b;
  b.min = v.front(), b.max = v.back();
  b.q1 = quantile_sorted(v, 0.25), b.median = quantile_sorted(v, 0.5), b.q3 = quantile_sorted(v, 0.75);
  const double iqr = b.q3 - b.q1;
  b.whisker_lo = b.max, b.whisker_hi = b.min;
  for (double x : v) {
    if (x < b.q1 - 1.5 * iqr || x > b.q3 + 1.5 * iqr) {
      b.outliers.push_back(x);
    } else {
      b.whisker_lo = std::min(b.whisker_lo, x);
      b.whisker_hi = std::max(b.whisker_hi, x);
    }
  }
  return b;
}

// ---------------------------------------------------------------- figures

struct MethodVolumes {
  std::string method;
  std::vector<std::string> sample_ids;
  std::vector<Volume> predictions;
  std::vector<Volume> targets;
};

struct HeatmapLayout {
  double vmax = 0.0;         // shared colour scale [0, vmax]
  std::size_t slice = 0;     // axial index
  std::string sample_id;     // sample shown
  std::vector<std::string> rows;  // one row per method: target | prediction | |error|
};

/// One row per method showing target, prediction and |error| for the chosen
/// sample's axial slice, with a colour bar on the right. All error panels use
/// the same scale, the maximum error over every method's slice.
inline HeatmapLayout render_heatmaps(const std::vector<MethodVolumes>& methods, std::size_t sample,
                                     std::optional<std::size_t> slice, Image* out) {
  if (methods.empty()) throw ParameterError("render_heatmaps: no methods");
  HeatmapLayout lay;
  const Volume& t0 = methods[0].targets.at(sample);
  const Dims3 s = t0.dims();
  lay.slice = slice.value_or(s.d / 2);
  lay.sample_id = methods[0].sample_ids.at(sample);
  std::vector<std::vector<double>> errs;
  for (const auto& m : methods) {
    errs.push_back(abs_error_slice(m.predictions.at(sample), m.targets.at(sample), lay.slice));
    for (double e : errs.back()) lay.vmax = std::max(lay.vmax, e);
    lay.rows.push_back(m.method);
  }
  const std::size_t scale = std::max<std::size_t>(1, 128 / std::max(s.h, s.w));
  const std::size_t pw = s.w * scale, ph = s.h * scale, gap = 6, bar = 16;
  Image img(3 * (pw + gap) + 2 * bar + gap, methods.size() * (ph + gap) + gap);
  for (std::size_t r = 0; r < methods.size(); ++r) {
    const auto& m = methods[r];
    const std::size_t y0 = gap + r * (ph + gap);
    for (std::size_t h = 0; h < s.h; ++h)
      for (std::size_t w = 0; w < s.w; ++w) {
        const std::array<Rgb, 3> c{gray_color(m.targets[sample].at(h, w, lay.slice)),
                                   gray_color(m.predictions[sample].at(h, w, lay.slice)),
                                   heat_color(lay.vmax > 0 ? errs[r][h * s.w + w] / lay.vmax : 0.0)};
        for (std::size_t p = 0; p < 3; ++p) {
          const long x = static_cast<long>(gap + p * (pw + gap) + w * scale);
          img.fill_rect(x, static_cast<long>(y0 + h * scale), x + static_cast<long>(scale),
                        static_cast<long>(y0 + (h + 1) * scale), c[p]);
        }
      }
  }
  const long bx = static_cast<long>(3 * (pw + gap) + gap), by0 = gap;
  const long by1 = static_cast<long>(img.height - gap);
  for (long y = by0; y < by1; ++y)
    img.hline(bx, bx + bar - 1, y, heat_color(1.0 - double(y - by0) / double(std::max(1L, by1 - by0 - 1))));
  img.frame(bx - 1, by0 - 1, bx + bar + 1, by1 + 1, kBlack);
  if (out) *out = std::move(img);
  return lay;
}

/// Overlaid step histograms of all methods on one shared axis.
inline Image render_histograms(const std::vector<std::pair<std::string, Histogram>>& hists) {
  constexpr std::size_t bw = 5, H = 200, pad = 10;
  Image img(kHistogramBins * bw + 2 * pad, H + 2 * pad);
  double peak = 0.0;
  for (const auto& [m, h] : hists)
    for (auto c : h.counts) peak = std::max(peak, double(c) / std::max<double>(1.0, double(h.total())));
  img.frame(pad - 1, pad - 1, pad + kHistogramBins * bw + 1, pad + H + 1, kBlack);
  img.vline(pad + 50 * bw + bw / 2, pad, pad + H - 1, kGrey);
  for (std::size_t k = 0; k < hists.size(); ++k) {
    const auto& h = hists[k].second;
    const double tot = std::max<double>(1.0, double(h.total()));
    long prev = -1;
    for (std::size_t i = 0; i < kHistogramBins; ++i) {
      const double f = peak > 0 ? double(h.counts[i]) / tot / peak : 0.0;
      const long y = static_cast<long>(pad + H - 1) - std::lround(f * double(H - 1));
      const long x0 = static_cast<long>(pad + i * bw);
      img.hline(x0, x0 + bw - 1, y, series_color(k));
      if (prev >= 0) img.vline(x0, prev, y, series_color(k));
      prev = y;
    }
  }
  return img;
}

/// Side-by-side boxplots on a shared axis [lo, hi].
inline Image render_boxplots(const std::vector<std::pair<std::string, BoxStats>>& boxes, double lo, double hi) {
  constexpr long H = 200, pad = 10, slot = 40, half = 12;
  Image img(static_cast<std::size_t>(2 * pad + slot * static_cast<long>(boxes.size())), H + 2 * pad);
  const double span = hi > lo ? hi - lo : 1.0;
  auto y_of = [&](double v) { return pad + H - 1 - std::lround((v - lo) / span * double(H - 1)); };
  img.frame(pad - 1, pad - 1, static_cast<long>(img.width) - pad + 1, pad + H + 1, kBlack);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i].second;
    const long cx = pad + slot * static_cast<long>(i) + slot / 2;
    const Rgb c = series_color(i);
    img.vline(cx, y_of(b.whisker_lo), y_of(b.q1), kBlack);
    img.vline(cx, y_of(b.q3), y_of(b.whisker_hi), kBlack);
    img.hline(cx - half / 2, cx + half / 2, y_of(b.whisker_lo), kBlack);
    img.hline(cx - half / 2, cx + half / 2, y_of(b.whisker_hi), kBlack);
    img.fill_rect(cx - half, y_of(b.q3), cx + half + 1, y_of(b.q1) + 1, c);
    img.frame(cx - half, y_of(b.q3), cx + half + 1, y_of(b.q1) + 1, kBlack);
    img.hline(cx - half, cx + half, y_of(b.median), kBlack);
    for (double o : b.outliers) img.fill_rect(cx - 1, y_of(o) - 1, cx + 2, y_of(o) + 2, kBlack);
  }
  return img;
}

/// Per-sample groups of four bars (stream weights in stream order).
inline Image render_alpha_bars(const std::vector<std::array<double, 4>>& alphas) {
  constexpr long H = 120, pad = 10, bw = 4, group = 4 * bw + 4;
  Image img(static_cast<std::size_t>(2 * pad + group * static_cast<long>(std::max<std::size_t>(1, alphas.size()))),
            H + 2 * pad);
  img.frame(pad - 1, pad - 1, static_cast<long>(img.width) - pad + 1, pad + H + 1, kBlack);
  for (std::size_t i = 0; i < alphas.size(); ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      const long x = pad + group * static_cast<long>(i) + 2 + bw * static_cast<long>(k);
      const long top = pad + H - std::lround(std::clamp(alphas[i][k], 0.0, 1.0) * double(H));
      img.fill_rect(x, top, x + bw, pad + H, series_color(k));
    }
  return img;
}

}  // namespace meal
