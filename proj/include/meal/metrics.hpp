#pragma once

// Training loss and evaluation metrics: MSE/MAE pixel term, windowed 3-D SSIM,
// 3-D PSNR and Dice overlap.

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "meal/interp.hpp"
#include "meal/ops.hpp"

namespace meal {

struct SsimConfig {
  std::size_t window = 7;  // uniform cubic window
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

namespace detail {

// Valid box sum along one axis of a (outer, n, inner) view.
template <class T>
Tensor<T> box_valid_axis(const Tensor<T>& in, std::size_t axis, std::size_t w) {
  Shape os = in.shape();
  const std::size_t n = os[axis];
  os[axis] = n - w + 1;
  Tensor<T> out(os);
  const auto [outer, inner] = outer_inner(in.shape(), axis);
  const std::size_t m = n - w + 1;
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t o = 0; o < m; ++o) {
      T* dst = out.data() + (a * m + o) * inner;
      for (std::size_t j = 0; j < w; ++j) {
        const T* src = in.data() + (a * n + o + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  return out;
}

// Adjoint of box_valid_axis: scatters each window sum back over its support.
template <class T>
Tensor<T> box_full_axis(const Tensor<T>& g, std::size_t axis, std::size_t w) {
  Shape is = g.shape();
  const std::size_t m = is[axis];
  const std::size_t n = m + w - 1;
  is[axis] = n;
  Tensor<T> out(is);
  const auto [outer, inner] = outer_inner(g.shape(), axis);
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t o = 0; o < m; ++o) {
      const T* src = g.data() + (a * m + o) * inner;
      for (std::size_t j = 0; j < w; ++j) {
        T* dst = out.data() + (a * n + o + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  return out;
}

template <class T>
Tensor<T> box_valid(const Tensor<T>& x, std::size_t w) {
  return box_valid_axis(box_valid_axis(box_valid_axis(x, 1, w), 2, w), 3, w);
}

template <class T>
Tensor<T> box_full(const Tensor<T>& g, std::size_t w) {
  return box_full_axis(box_full_axis(box_full_axis(g, 3, w), 2, w), 1, w);
}

template <class T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, auto op) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

// Outer-product layout for box filtering needs the (B,H,W,D,C) rank.
template <class T>
void require_ssim_shape(const Tensor<T>& a, const Tensor<T>& b, std::size_t w) {
  require_rank5(a, "ssim3d");
  a.check_same(b, "ssim3d");
  const auto& s = a.shape();
  if (s[1] < w || s[2] < w || s[3] < w)
    throw ShapeError("ssim3d: volume " + shape_str(s) + " is smaller than the " +
                     std::to_string(w) + "^3 window");
}

}  // namespace detail

/// Mean local SSIM over all fully contained windows (population moments).
/// Differentiable with respect to both arguments.
template <class T>
Var<T> ssim3d(const Var<T>& x, const Var<T>& y, const SsimConfig& cfg = {}) {
  const std::size_t w = cfg.window;
  detail::require_ssim_shape(x.value(), y.value(), w);
  const T N = static_cast<T>(w * w * w);
  const T C1 = static_cast<T>((cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range));
  const T C2 = static_cast<T>((cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range));
  const auto& xv = x.value();
  const auto& yv = y.value();
  auto mul = [](T a, T b) { return a * b; };
  Tensor<T> mx = detail::box_valid(xv, w);
  Tensor<T> my = detail::box_valid(yv, w);
  Tensor<T> exx = detail::box_valid(detail::elementwise(xv, xv, mul), w);
  Tensor<T> eyy = detail::box_valid(detail::elementwise(yv, yv, mul), w);
  Tensor<T> exy = detail::box_valid(detail::elementwise(xv, yv, mul), w);
  const std::size_t M = mx.size();
  // Per-window partial derivatives of s with respect to (mx, my, exx, eyy, exy).
  Tensor<T> d_mx(mx.shape()), d_my(mx.shape()), d_exx(mx.shape()), d_eyy(mx.shape()),
      d_exy(mx.shape());
  T total{0};
  for (std::size_t i = 0; i < M; ++i) {
    const T ux = mx[i] / N, uy = my[i] / N;
    const T xx = exx[i] / N, yy = eyy[i] / N, xy = exy[i] / N;
    const T a1 = T{2} * ux * uy + C1;
    const T a2 = T{2} * (xy - ux * uy) + C2;
    const T b1 = ux * ux + uy * uy + C1;
    const T b2 = (xx - ux * ux) + (yy - uy * uy) + C2;
    const T s = (a1 * a2) / (b1 * b2);
    total += s;
    d_mx[i] = s * (T{2} * uy / a1 - T{2} * uy / a2 - T{2} * ux / b1 + T{2} * ux / b2);
    d_my[i] = s * (T{2} * ux / a1 - T{2} * ux / a2 - T{2} * uy / b1 + T{2} * uy / b2);
    d_exx[i] = -s / b2;
    d_eyy[i] = -s / b2;
    d_exy[i] = T{2} * s / a2;
  }
  const T value = total / static_cast<T>(M);
  return make_result<T>(
      Tensor<T>(Shape{1}, value), {x, y},
      [w, N, M, d_mx = std::move(d_mx), d_my = std::move(d_my), d_exx = std::move(d_exx),
       d_eyy = std::move(d_eyy), d_exy = std::move(d_exy)](Node<T>& self) {
        const T scale = self.grad[0] / (static_cast<T>(M) * N);
        const auto& xv = self.inputs[0]->value;
        const auto& yv = self.inputs[1]->value;
        Tensor<T> g_exy = detail::box_full(d_exy, w);
        auto side = [&](const Tensor<T>& d_m, const Tensor<T>& d_e, const Tensor<T>& self_v,
                        const Tensor<T>& other_v) {
          Tensor<T> g_m = detail::box_full(d_m, w);
          Tensor<T> g_e = detail::box_full(d_e, w);
          Tensor<T> g(self_v.shape());
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = scale * (g_m[i] + T{2} * self_v[i] * g_e[i] + other_v[i] * g_exy[i]);
          return g;
        };
        if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(side(d_mx, d_exx, xv, yv));
        if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(side(d_my, d_eyy, yv, xv));
      });
}

/// SSIM of two tensors, evaluated in double precision.
template <class T>
double ssim3d(const Tensor<T>& a, const Tensor<T>& b, const SsimConfig& cfg = {}) {
  NoGradGuard ng;
  auto r = ssim3d(Var<double>::constant(a.template cast<double>()),
                  Var<double>::constant(b.template cast<double>()), cfg);
  return r.value()[0];
}

enum class PixelLoss { mse, mae };

struct LossConfig {
  double ssim_weight = 0.8;
  PixelLoss pixel = PixelLoss::mse;
  SsimConfig ssim;
};

/// L = pixel(pred, target) + w (1 - SSIM(pred, target)), pixel term MSE by default.
template <class T>
Var<T> composite_loss(const Var<T>& pred, const Var<T>& target, const LossConfig& cfg = {}) {
  pred.value().check_same(target.value(), "composite_loss");
  Var<T> pix = cfg.pixel == PixelLoss::mse ? mse(pred, target) : mae(pred, target);
  Var<T> s = ssim3d(pred, target, cfg.ssim);
  // pix + w - w * ssim
  return add(add_scalar(pix, static_cast<T>(cfg.ssim_weight)),
             scale(s, static_cast<T>(-cfg.ssim_weight)));
}

/// 10 log10(range^2 / MSE); +infinity for identical inputs.
template <class T>
double psnr3d(const Tensor<T>& pred, const Tensor<T>& target, double data_range = 1.0) {
  pred.check_same(target, "psnr3d");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  const double m = acc / static_cast<double>(pred.size());
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / m);
}

inline constexpr double kPsnrReportCap = 100.0;

inline double psnr_for_report(double db) { return std::min(db, kPsnrReportCap); }

/// 2|A n B| / (|A| + |B|); two empty masks agree perfectly (1.0).
template <class T>
double dice(const Tensor<T>& a, const Tensor<T>& b) {
  a.check_same(b, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] != T{0} && a[i] != T{1}) || (b[i] != T{0} && b[i] != T{1}))
      throw ParameterError("dice: masks must be binary (0/1)");
    const bool x = a[i] == T{1}, y = b[i] == T{1};
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

// ---------------------------------------------------------------- records

enum class Condition { none, flip, rotate, crop, intensity };
enum class Split { unseen, predefined };

inline const char* to_string(Condition c) {
  switch (c) {
    case Condition::none: return "none";
    case Condition::flip: return "flip";
    case Condition::rotate: return "rotate";
    case Condition::crop: return "crop";
    case Condition::intensity: return "intensity";
  }
  return "?";
}

inline Condition parse_condition(const std::string& s) {
  for (Condition c : {Condition::none, Condition::flip, Condition::rotate, Condition::crop,
                      Condition::intensity})
    if (s == to_string(c)) return c;
  throw UsageError("unknown condition '" + s + "' (expected none, flip, rotate, crop or intensity)");
}

inline const char* to_string(Split s) { return s == Split::unseen ? "unseen" : "predefined"; }

inline Split parse_split(const std::string& s) {
  if (s == "unseen") return Split::unseen;
  if (s == "predefined") return Split::predefined;
  throw UsageError("unknown split '" + s + "' (expected unseen or predefined)");
}

struct MetricRecord {
  std::string sample_id;
  std::string method;
  Condition condition = Condition::none;
  Split split = Split::unseen;
  double psnr_db = 0.0;  // may be +inf for identical volumes; capped when written
  double ssim = 0.0;
  std::optional<double> dice;
};

inline const char* kMetricCsvHeader = "sample_id,method,condition,split,psnr_db,ssim,dice";

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// Optional leading provenance line, "# manifest_sha256=<hex>".
inline void write_csv_digest(std::ostream& os, const std::string& digest) {
  if (!digest.empty()) os << "# manifest_sha256=" << digest << '\n';
}

/// Reads the first non-comment line into `line`.
inline bool getline_skip_comments(std::istream& is, std::string& line) {
  while (std::getline(is, line))
    if (line.empty() || line[0] != '#') return true;
  return false;
}

inline void write_metric_csv(std::ostream& os, const std::vector<MetricRecord>& rows,
                             const std::string& digest = "") {
  write_csv_digest(os, digest);
  os << kMetricCsvHeader << '\n';
  for (const auto& r : rows) {
    if (r.sample_id.find(',') != std::string::npos || r.method.find(',') != std::string::npos)
      throw ParameterError("metric CSV fields must not contain commas");
    os << r.sample_id << ',' << r.method << ',' << to_string(r.condition) << ','
       << to_string(r.split) << ',' << format_double(psnr_for_report(r.psnr_db)) << ','
       << format_double(r.ssim) << ',' << (r.dice ? format_double(*r.dice) : "") << '\n';
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::vector<MetricRecord> read_metric_csv(std::istream& is, const std::string& origin = "csv") {
  std::string line;
  if (!getline_skip_comments(is, line)) throw IoError(origin + ": empty metric CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricCsvHeader) throw IoError(origin + ": unexpected metric CSV header '" + line + "'");
  std::vector<MetricRecord> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 7)
      throw IoError(origin + ":" + std::to_string(lineno) + ": expected 7 columns");
    MetricRecord r;
    r.sample_id = cells[0];
    r.method = cells[1];
    r.condition = parse_condition(cells[2]);
    r.split = parse_split(cells[3]);
    try {
      r.psnr_db = std::stod(cells[4]);
      r.ssim = std::stod(cells[5]);
      if (!cells[6].empty()) r.dice = std::stod(cells[6]);
    } catch (const std::exception&) {
      throw IoError(origin + ":" + std::to_string(lineno) + ": malformed number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<MetricRecord> read_metric_csv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open metric CSV '" + path + "'");
  return read_metric_csv(f, path);
}

}  // namespace meal
