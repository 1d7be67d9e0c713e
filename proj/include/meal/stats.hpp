#pragma once

// Statistical comparison of per-sample metric scores: normality gate,
// paired and group-wise tests, Dunn post-hoc with Bonferroni correction,
// and mean-score ranking.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "meal/metrics.hpp"

namespace meal {

inline constexpr double kSignificanceAlpha = 0.01;

struct ShapiroResult {
  double w = 0.0;
  double p = 0.0;
};

struct TestResult {
  std::string test_name;
  double statistic = 0.0;
  double p = 1.0;
  bool significant = false;
};

namespace stats_detail {

inline double normal_sf(double z) {
  return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), z));
}

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double poly(const double* c, int n, double x) {
  double r = c[n - 1];
  for (int i = n - 2; i >= 0; --i) r = r * x + c[i];
  return r;
}

inline double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Average ranks (1-based) and the tie-group sizes.
inline std::vector<double> average_ranks(const std::vector<double>& x, std::vector<std::size_t>* ties = nullptr) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    if (ties) ties->push_back(j - i + 1);
    i = j + 1;
  }
  return r;
}

inline double tie_sum(const std::vector<std::size_t>& ties) {
  double s = 0.0;
  for (auto t : ties) s += static_cast<double>(t) * t * t - static_cast<double>(t);
  return s;
}

}  // namespace stats_detail

/// Shapiro-Wilk W and p-value (Royston's approximation, as in algorithm AS R94).
inline ShapiroResult shapiro_wilk(std::vector<double> x) {
  using namespace stats_detail;
  const std::size_t n = x.size();
  if (n < 3) throw TestInapplicableError("shapiro_wilk: need at least 3 observations");
  if (n > 5000) throw TestInapplicableError("shapiro_wilk: at most 5000 observations supported");
  std::sort(x.begin(), x.end());
  if (!(x.back() - x.front() > 0.0)) throw TestInapplicableError("shapiro_wilk: zero variance");

  static constexpr double c1[] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
  static constexpr double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  static constexpr double c3[] = {0.5440, -0.39978, 0.025054, -6.714e-4};
  static constexpr double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static constexpr double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static constexpr double c6[] = {-0.4803, -0.082676, 0.0030302};
  static constexpr double g[] = {-2.273, 0.459};

  const std::size_t n2 = n / 2;
  const double an = static_cast<double>(n);
  std::vector<double> a(n2);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
  } else {
    std::vector<double> m(n2);
    double summ2 = 0.0;
    for (std::size_t i = 0; i < n2; ++i) {
      m[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / (an + 0.25));
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = poly(c1, 6, rsn) - m[0] / ssumm2;
    std::size_t first;
    double fac;
    if (n > 5) {
      const double a2 = -m[1] / ssumm2 + poly(c2, 6, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) /
                      (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[1] = a2;
      first = 2;
    } else {
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
      first = 1;
    }
    a[0] = a1;
    for (std::size_t i = first; i < n2; ++i) a[i] = -m[i] / fac;
  }

  // W is the squared correlation between the ordered sample and the
  // antisymmetric coefficient vector.
  const double xm = mean(x);
  double sax = 0.0, ssa = 0.0, ssx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double ai = 0.0;
    if (i < n2) ai = -a[i];
    else if (n - 1 - i < n2) ai = a[n - 1 - i];
    const double xi = x[i] - xm;
    sax += ai * xi;
    ssa += ai * ai;
    ssx += xi * xi;
  }
  ShapiroResult r;
  r.w = std::min(1.0, sax * sax / (ssa * ssx));
  const double w1 = 1.0 - r.w;

  if (n == 3) {
    constexpr double pi6 = 1.90985931710274, stqr = 1.04719755119660;
    r.p = std::max(0.0, pi6 * (std::asin(std::sqrt(r.w)) - stqr));
    return r;
  }
  if (w1 <= 0.0) {
    r.p = 1.0;
    return r;
  }
  double y = std::log(w1);
  const double lxx = std::log(an);
  double mu, sd;
  if (n <= 11) {
    const double gamma = poly(g, 2, an);
    if (y >= gamma) {
      r.p = 1e-99;
      return r;
    }
    y = -std::log(gamma - y);
    mu = poly(c3, 4, an);
    sd = std::exp(poly(c4, 4, an));
  } else {
    mu = poly(c5, 4, lxx);
    sd = std::exp(poly(c6, 3, lxx));
  }
  r.p = normal_sf((y - mu) / sd);
  return r;
}

/// True when the Shapiro-Wilk gate accepts normality; degenerate samples are
/// treated as non-normal.
inline bool passes_normality(const std::vector<double>& x, double alpha, ShapiroResult* out = nullptr) {
  try {
    const ShapiroResult s = shapiro_wilk(x);
    if (out) *out = s;
    return s.p >= alpha;
  } catch (const TestInapplicableError&) {
    if (out) *out = {std::nan(""), std::nan("")};
    return false;
  }
}

inline void require_paired(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw TestInapplicableError("paired test: samples differ in length");
  if (a.size() < 3) throw TestInapplicableError("paired test: need at least 3 pairs");
}

/// Two-sided paired t-test on a - b.
inline TestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b,
                                double alpha = kSignificanceAlpha) {
  require_paired(a, b);
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double m = stats_detail::mean(d);
  double ss = 0.0;
  for (double v : d) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TestResult r{"paired t-test", 0.0, 1.0, false};
  if (sd == 0.0) {
    // Constant differences: zero difference is no evidence, any other value is conclusive.
    r.statistic = m == 0.0 ? 0.0 : std::copysign(INFINITY, m);
    r.p = m == 0.0 ? 1.0 : 0.0;
  } else {
    r.statistic = m / (sd / std::sqrt(static_cast<double>(n)));
    boost::math::students_t_distribution<double> t(static_cast<double>(n - 1));
    r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(t, std::abs(r.statistic))));
  }
  r.significant = r.p < alpha;
  return r;
}

/// Two-sided Wilcoxon signed-rank test on a - b. Zero differences are dropped.
/// Up to 25 untied non-zero differences use the exact null distribution,
/// otherwise the normal approximation with tie correction (no continuity
/// correction). The statistic is min(R+, R-).
inline TestResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                                       double alpha = kSignificanceAlpha) {
  require_paired(a, b);
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  TestResult r{"Wilcoxon signed-rank", 0.0, 1.0, false};
  const std::size_t n = d.size();
  if (n == 0) return r;
  std::vector<double> absd(n);
  for (std::size_t i = 0; i < n; ++i) absd[i] = std::abs(d[i]);
  std::vector<std::size_t> ties;
  const auto ranks = stats_detail::average_ranks(absd, &ties);
  double rplus = 0.0, rminus = 0.0;
  for (std::size_t i = 0; i < n; ++i) (d[i] > 0 ? rplus : rminus) += ranks[i];
  r.statistic = std::min(rplus, rminus);
  const bool tied = std::any_of(ties.begin(), ties.end(), [](std::size_t t) { return t > 1; });
  if (n <= 25 && !tied) {
    // counts[s] = number of sign assignments with R+ = s.
    const std::size_t max_sum = n * (n + 1) / 2;
    std::vector<double> counts(max_sum + 1, 0.0);
    counts[0] = 1.0;
    for (std::size_t k = 1; k <= n; ++k)
      for (std::size_t s = max_sum; s >= k; --s) counts[s] += counts[s - k];
    const double total = std::ldexp(1.0, static_cast<int>(n));
    const auto t = static_cast<std::size_t>(std::llround(rplus));
    double lower = 0.0, upper = 0.0;
    for (std::size_t s = 0; s <= max_sum; ++s) {
      if (s <= t) lower += counts[s];
      if (s >= t) upper += counts[s];
    }
    r.test_name = "Wilcoxon signed-rank (exact)";
    r.p = std::min(1.0, 2.0 * std::min(lower, upper) / total);
  } else {
    const double nn = static_cast<double>(n);
    const double mn = nn * (nn + 1.0) / 4.0;
    const double var = (nn * (nn + 1.0) * (2.0 * nn + 1.0) - stats_detail::tie_sum(ties) / 2.0) / 24.0;
    r.test_name = "Wilcoxon signed-rank (normal approx.)";
    r.p = var > 0.0 ? std::min(1.0, 2.0 * stats_detail::normal_sf(std::abs(rplus - mn) / std::sqrt(var)))
                    : 1.0;
  }
  r.significant = r.p < alpha;
  return r;
}

struct PairwiseOutcome {
  TestResult test;
  ShapiroResult normality;  // of the differences; NaN when degenerate
  bool normal = false;
};

/// Shapiro-Wilk on the differences routes to the paired t-test (normal) or
/// the Wilcoxon signed-rank test. All-zero differences give p = 1.
inline PairwiseOutcome pairwise_compare(const std::vector<double>& a, const std::vector<double>& b,
                                        double alpha = kSignificanceAlpha) {
  require_paired(a, b);
  PairwiseOutcome o;
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; })) {
    o.normality = {std::nan(""), std::nan("")};
    o.test = {"none (identical samples)", 0.0, 1.0, false};
    return o;
  }
  o.normal = passes_normality(d, alpha, &o.normality);
  o.test = o.normal ? paired_t_test(a, b, alpha) : wilcoxon_signed_rank(a, b, alpha);
  return o;
}

inline void require_groups(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw TestInapplicableError("group test: need at least 2 groups");
  for (const auto& g : groups)
    if (g.size() < 3) throw TestInapplicableError("group test: every group needs at least 3 values");
}

inline TestResult one_way_anova(const std::vector<std::vector<double>>& groups,
                                double alpha = kSignificanceAlpha) {
  require_groups(groups);
  const double k = static_cast<double>(groups.size());
  double N = 0.0, grand = 0.0;
  for (const auto& g : groups) {
    N += static_cast<double>(g.size());
    grand += std::accumulate(g.begin(), g.end(), 0.0);
  }
  grand /= N;
  double ssb = 0.0, ssw = 0.0;
  for (const auto& g : groups) {
    const double m = stats_detail::mean(g);
    ssb += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    for (double v : g) ssw += (v - m) * (v - m);
  }
  TestResult r{"one-way ANOVA", 0.0, 1.0, false};
  const double df1 = k - 1.0, df2 = N - k;
  if (ssw == 0.0) {
    r.statistic = ssb == 0.0 ? 0.0 : INFINITY;
    r.p = ssb == 0.0 ? 1.0 : 0.0;
  } else {
    r.statistic = (ssb / df1) / (ssw / df2);
    boost::math::fisher_f_distribution<double> f(df1, df2);
    r.p = boost::math::cdf(boost::math::complement(f, r.statistic));
  }
  r.significant = r.p < alpha;
  return r;
}

/// Kruskal-Wallis H with tie correction. All values tied gives H = 0, p = 1.
inline TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups,
                                 double alpha = kSignificanceAlpha) {
  require_groups(groups);
  std::vector<double> pooled;
  for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());
  std::vector<std::size_t> ties;
  const auto ranks = stats_detail::average_ranks(pooled, &ties);
  const double N = static_cast<double>(pooled.size());
  // Deviation form of H: exactly zero when all mean ranks coincide.
  const double centre = (N + 1.0) / 2.0;
  double acc = 0.0;
  std::size_t off = 0;
  for (const auto& g : groups) {
    double rs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) rs += ranks[off + i];
    const double dev = rs / static_cast<double>(g.size()) - centre;
    acc += static_cast<double>(g.size()) * dev * dev;
    off += g.size();
  }
  TestResult r{"Kruskal-Wallis H", 0.0, 1.0, false};
  const double correction = 1.0 - stats_detail::tie_sum(ties) / (N * N * N - N);
  if (correction <= 0.0) return r;
  r.statistic = 12.0 / (N * (N + 1.0)) * acc / correction;
  boost::math::chi_squared_distribution<double> chi(static_cast<double>(groups.size() - 1));
  r.p = r.statistic == 0.0 ? 1.0 : boost::math::cdf(boost::math::complement(chi, r.statistic));
  r.significant = r.p < alpha;
  return r;
}

struct GroupwiseOutcome {
  TestResult test;
  std::vector<ShapiroResult> normality;
  bool all_normal = false;
};

/// One-way ANOVA when every group passes the normality gate, otherwise Kruskal-Wallis.
inline GroupwiseOutcome groupwise_test(const std::vector<std::vector<double>>& groups,
                                       double alpha = kSignificanceAlpha) {
  require_groups(groups);
  GroupwiseOutcome o;
  o.all_normal = true;
  for (const auto& g : groups) {
    ShapiroResult s;
    o.all_normal = passes_normality(g, alpha, &s) && o.all_normal;
    o.normality.push_back(s);
  }
  o.test = o.all_normal ? one_way_anova(groups, alpha) : kruskal_wallis(groups, alpha);
  return o;
}

using PMatrix = std::vector<std::vector<double>>;

/// Dunn's pairwise z-tests on pooled ranks (tie-corrected), two-sided p values
/// multiplied by k(k-1)/2 and clipped to 1. Unit diagonal.
inline PMatrix dunn_bonferroni(const std::vector<std::vector<double>>& groups) {
  require_groups(groups);
  const std::size_t k = groups.size();
  std::vector<double> pooled;
  for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());
  std::vector<std::size_t> ties;
  const auto ranks = stats_detail::average_ranks(pooled, &ties);
  const double N = static_cast<double>(pooled.size());
  std::vector<double> mean_rank(k);
  std::size_t off = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < groups[i].size(); ++j) s += ranks[off + j];
    mean_rank[i] = s / static_cast<double>(groups[i].size());
    off += groups[i].size();
  }
  const double base = N * (N + 1.0) / 12.0 - stats_detail::tie_sum(ties) / (12.0 * (N - 1.0));
  const double m = static_cast<double>(k * (k - 1) / 2);
  PMatrix p(k, std::vector<double>(k, 1.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const double se = std::sqrt(base * (1.0 / groups[i].size() + 1.0 / groups[j].size()));
      const double diff = std::abs(mean_rank[i] - mean_rank[j]);
      double raw = 1.0;
      if (se > 0.0) raw = 2.0 * stats_detail::normal_sf(diff / se);
      else if (diff > 0.0) raw = 0.0;
      p[i][j] = p[j][i] = std::min(1.0, raw * m);
    }
  return p;
}

enum class Metric { psnr, ssim, dice };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::psnr: return "psnr";
    case Metric::ssim: return "ssim";
    case Metric::dice: return "dice";
  }
  return "?";
}

inline Metric parse_metric(const std::string& s) {
  if (s == "psnr") return Metric::psnr;
  if (s == "ssim") return Metric::ssim;
  if (s == "dice") return Metric::dice;
  throw UsageError("unknown metric '" + s + "'");
}

inline std::optional<double> metric_value(const MetricRecord& r, Metric m) {
  switch (m) {
    case Metric::psnr: return psnr_for_report(r.psnr_db);
    case Metric::ssim: return r.ssim;
    case Metric::dice: return r.dice;
  }
  return std::nullopt;
}

/// Methods by descending mean score; equal means keep lexicographic order.
inline std::vector<std::pair<std::string, double>> rank_methods(const std::vector<MetricRecord>& records,
                                                                Metric metric) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : records) {
    const auto v = metric_value(r, metric);
    if (!v) continue;
    auto& [s, n] = acc[r.method];
    s += *v;
    ++n;
  }
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [name, sn] : acc) out.emplace_back(name, sn.first / static_cast<double>(sn.second));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

// ---------------------------------------------------------------- report

struct PairwiseEntry {
  std::string a, b;
  PairwiseOutcome outcome;
};

struct StatReport {
  Metric metric = Metric::ssim;
  std::string section;  // e.g. "unseen / rotate"
  double alpha = kSignificanceAlpha;
  std::vector<std::string> methods;
  std::vector<std::string> sample_ids;
  std::map<std::string, std::vector<double>> groups;
  std::map<std::string, ShapiroResult> normality;
  TestResult omnibus;
  bool omnibus_all_normal = false;
  std::vector<PairwiseEntry> pairwise;
  std::optional<PMatrix> posthoc;  // present iff the omnibus test is significant
  std::vector<std::pair<std::string, double>> ranking;
};

/// Aligns the records of every method by sample id. Throws AlignmentError
/// naming the offending methods and ids when the sets differ.
inline std::map<std::string, std::vector<double>> align_groups(const std::vector<MetricRecord>& records,
                                                               Metric metric,
                                                               std::vector<std::string>* ids_out = nullptr) {
  std::map<std::string, std::map<std::string, double>> by_method;
  for (const auto& r : records) {
    const auto v = metric_value(r, metric);
    if (!v) throw ParameterError("record " + r.sample_id + "/" + r.method + " lacks " + to_string(metric));
    if (!by_method[r.method].emplace(r.sample_id, *v).second)
      throw AlignmentError("duplicate sample id '" + r.sample_id + "' for method " + r.method);
  }
  std::set<std::string> all;
  for (const auto& [m, rows] : by_method)
    for (const auto& [id, v] : rows) all.insert(id);
  std::ostringstream bad;
  for (const auto& [m, rows] : by_method)
    for (const auto& id : all)
      if (!rows.count(id)) bad << ' ' << m << ":" << id;
  if (!bad.str().empty()) throw AlignmentError("sample ids missing for method:id" + bad.str());
  std::map<std::string, std::vector<double>> groups;
  for (const auto& [m, rows] : by_method)
    for (const auto& [id, v] : rows) groups[m].push_back(v);
  if (ids_out) ids_out->assign(all.begin(), all.end());
  return groups;
}

inline StatReport build_stat_report(const std::vector<MetricRecord>& records, Metric metric,
                                    const std::string& section = "", double alpha = kSignificanceAlpha) {
  StatReport r;
  r.metric = metric;
  r.section = section;
  r.alpha = alpha;
  r.groups = align_groups(records, metric, &r.sample_ids);
  if (r.groups.size() < 2) throw UsageError("comparison needs at least two methods");
  std::vector<std::vector<double>> gs;
  for (const auto& [m, v] : r.groups) {
    r.methods.push_back(m);
    gs.push_back(v);
  }
  auto g = groupwise_test(gs, alpha);
  r.omnibus = g.test;
  r.omnibus_all_normal = g.all_normal;
  for (std::size_t i = 0; i < r.methods.size(); ++i) r.normality[r.methods[i]] = g.normality[i];
  for (std::size_t i = 0; i < gs.size(); ++i)
    for (std::size_t j = i + 1; j < gs.size(); ++j)
      r.pairwise.push_back({r.methods[i], r.methods[j], pairwise_compare(gs[i], gs[j], alpha)});
  if (r.omnibus.significant) r.posthoc = dunn_bonferroni(gs);
  r.ranking = rank_methods(records, metric);
  return r;
}

inline nlohmann::json json_number(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const TestResult& t) {
  return {{"test", t.test_name}, {"statistic", json_number(t.statistic)}, {"p", json_number(t.p)},
          {"significant", t.significant}};
}

inline nlohmann::json to_json(const StatReport& r) {
  nlohmann::json j;
  j["metric"] = to_string(r.metric);
  j["section"] = r.section;
  j["alpha"] = r.alpha;
  j["methods"] = r.methods;
  j["sample_ids"] = r.sample_ids;
  j["groups"] = r.groups;
  for (const auto& [m, s] : r.normality) j["normality"][m] = {{"W", json_number(s.w)}, {"p", json_number(s.p)}};
  j["omnibus"] = to_json(r.omnibus);
  j["omnibus"]["all_normal"] = r.omnibus_all_normal;
  j["pairwise"] = nlohmann::json::array();
  for (const auto& p : r.pairwise) {
    auto o = to_json(p.outcome.test);
    o["pair"] = {p.a, p.b};
    o["differences_normal"] = p.outcome.normal;
    j["pairwise"].push_back(std::move(o));
  }
  j["posthoc"] = r.posthoc ? nlohmann::json(*r.posthoc) : nlohmann::json(nullptr);
  j["posthoc_method"] = "Dunn, Bonferroni-adjusted";
  j["ranking"] = nlohmann::json::array();
  for (const auto& [m, v] : r.ranking) j["ranking"].push_back({{"method", m}, {"mean", v}});
  return j;
}

inline std::string format_p(double p) {
  if (!std::isfinite(p)) return "n/a";
  std::ostringstream os;
  if (p < 1e-4) os << std::scientific;
  else os << std::fixed;
  os.precision(p < 1e-4 ? 2 : 4);
  os << p;
  return os.str();
}

/// Text table with columns Section | Comparison | Metric | Test used | p-value | Significant?
inline std::string stat_table(const std::vector<StatReport>& reports) {
  struct Row { std::string s, c, m, t, p, sig; };
  std::vector<Row> rows{{"Section", "Comparison", "Metric", "Test used", "p-value", "Significant?"}};
  for (const auto& r : reports) {
    std::string all;
    for (const auto& m : r.methods) all += (all.empty() ? "" : ", ") + m;
    rows.push_back({r.section, "all (" + all + ")", to_string(r.metric), r.omnibus.test_name, format_p(r.omnibus.p),
                    r.omnibus.significant ? "Yes" : "No"});
    for (const auto& p : r.pairwise)
      rows.push_back({r.section, p.a + " vs " + p.b, to_string(r.metric), p.outcome.test.test_name,
                      format_p(p.outcome.test.p), p.outcome.test.significant ? "Yes" : "No"});
    if (r.posthoc)
      for (std::size_t i = 0; i < r.methods.size(); ++i)
        for (std::size_t j = i + 1; j < r.methods.size(); ++j) {
          const double p = (*r.posthoc)[i][j];
          rows.push_back({r.section, r.methods[i] + " vs " + r.methods[j], to_string(r.metric),
                          "Dunn (Bonferroni)", format_p(p), p < r.alpha ? "Yes" : "No"});
        }
  }
  std::array<std::size_t, 6> w{};
  for (const auto& r : rows) {
    const std::array<const std::string*, 6> cells{&r.s, &r.c, &r.m, &r.t, &r.p, &r.sig};
    for (std::size_t i = 0; i < 6; ++i) w[i] = std::max(w[i], cells[i]->size());
  }
  std::ostringstream os;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    const std::array<const std::string*, 6> cells{&r.s, &r.c, &r.m, &r.t, &r.p, &r.sig};
    for (std::size_t i = 0; i < 6; ++i) {
      os << *cells[i];
      if (i < 5) os << std::string(w[i] - cells[i]->size() + 2, ' ');
    }
    os << '\n';
    if (k == 0) {
      std::size_t total = 10;
      for (auto x : w) total += x;
      os << std::string(total, '-') << '\n';
    }
  }
  return os.str();
}

}  // namespace meal
