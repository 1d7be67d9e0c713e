#include <gtest/gtest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "meal/rng.hpp"
#include "meal/stats.hpp"

using namespace meal;
using nlohmann::json;

namespace {

const json& fixtures() {
  static const json j = [] {
    std::ifstream in(std::string(MEAL_FIXTURE_DIR) + "/stats_fixtures.json");
    if (!in) throw std::runtime_error("missing stats_fixtures.json");
    return json::parse(in);
  }();
  return j;
}

std::vector<double> vec(const json& j) { return j.get<std::vector<double>>(); }

std::vector<std::vector<double>> groups_of(const json& c) {
  return c.at("groups").get<std::vector<std::vector<double>>>();
}

// p-values are compared on a relative scale once they are tiny.
void expect_p_near(double got, double want, double rel = 1e-6) {
  EXPECT_NEAR(got, want, rel * std::max(want, 1e-300) + 1e-12) << "want " << want;
}

std::vector<MetricRecord> records_for(const std::map<std::string, std::vector<double>>& scores) {
  std::vector<MetricRecord> out;
  for (const auto& [m, v] : scores)
    for (std::size_t i = 0; i < v.size(); ++i) {
      MetricRecord r;
      r.sample_id = "s" + std::to_string(100 + i);
      r.method = m;
      r.ssim = v[i];
      r.psnr_db = 20.0 + v[i];
      out.push_back(r);
    }
  return out;
}

}  // namespace

TEST(Shapiro, MatchesReferenceValues) {
  for (const auto& c : fixtures().at("shapiro")) {
    SCOPED_TRACE(c.at("name").get<std::string>());
    const auto r = shapiro_wilk(vec(c.at("x")));
    EXPECT_NEAR(r.w, c.at("W").get<double>(), 1e-6);
    EXPECT_NEAR(r.p, c.at("p").get<double>(), 1e-6);
  }
}

TEST(Shapiro, InvariantToShiftAndScale) {
  RngStream rng(5);
  std::vector<double> x(30), y(30);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal() + 0.3 * rng.uniform();
    y[i] = 3.5 * x[i] - 2.0;
  }
  const auto a = shapiro_wilk(x), b = shapiro_wilk(y);
  EXPECT_NEAR(a.w, b.w, 1e-12);
  EXPECT_NEAR(a.p, b.p, 1e-10);
  EXPECT_GT(a.w, 0.0);
  EXPECT_LE(a.w, 1.0);
}

TEST(Shapiro, RejectsDegenerateInput) {
  EXPECT_THROW(shapiro_wilk({1.0, 2.0}), TestInapplicableError);
  EXPECT_THROW(shapiro_wilk({4.0, 4.0, 4.0, 4.0}), TestInapplicableError);
  EXPECT_FALSE(passes_normality({4.0, 4.0, 4.0, 4.0}, kSignificanceAlpha));
}

TEST(PairedTests, MatchReferenceValues) {
  for (const auto& c : fixtures().at("paired")) {
    SCOPED_TRACE(c.at("name").get<std::string>());
    const auto a = vec(c.at("a")), b = vec(c.at("b"));
    const auto t = paired_t_test(a, b);
    EXPECT_NEAR(t.statistic, c.at("t").at("statistic").get<double>(), 1e-9);
    expect_p_near(t.p, c.at("t").at("p").get<double>());
    const auto w = wilcoxon_signed_rank(a, b);
    EXPECT_DOUBLE_EQ(w.statistic, c.at("wilcoxon").at("statistic").get<double>());
    expect_p_near(w.p, c.at("wilcoxon").at("p").get<double>());
    EXPECT_EQ(w.test_name.find("exact") != std::string::npos, c.at("wilcoxon").at("exact").get<bool>());

    const auto o = pairwise_compare(a, b);
    const bool chose_t = c.at("chosen") == "t";
    EXPECT_EQ(o.normal, chose_t);
    EXPECT_EQ(o.test.test_name, chose_t ? t.test_name : w.test_name);
    expect_p_near(o.normality.p, c.at("shapiro_p").get<double>(), 1e-5);
  }
}

TEST(PairedTests, IdenticalSamplesGivePOne) {
  const std::vector<double> a{0.7, 0.71, 0.69, 0.8, 0.75};
  const auto o = pairwise_compare(a, a);
  EXPECT_EQ(o.test.p, 1.0);
  EXPECT_FALSE(o.test.significant);
  EXPECT_EQ(wilcoxon_signed_rank(a, a).p, 1.0);
  EXPECT_EQ(paired_t_test(a, a).p, 1.0);
}

TEST(PairedTests, SymmetricInArgumentOrder) {
  RngStream rng(9);
  std::vector<double> a(18), b(18);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform();
    b[i] = a[i] + 0.05 * rng.normal() + 0.01;
  }
  EXPECT_NEAR(paired_t_test(a, b).p, paired_t_test(b, a).p, 1e-14);
  EXPECT_NEAR(wilcoxon_signed_rank(a, b).p, wilcoxon_signed_rank(b, a).p, 1e-14);
}

TEST(PairedTests, RejectMismatchedOrTinyInput) {
  EXPECT_THROW(paired_t_test({1, 2, 3}, {1, 2}), TestInapplicableError);
  EXPECT_THROW(wilcoxon_signed_rank({1, 2}, {1, 3}), TestInapplicableError);
}

TEST(WilcoxonExact, NullDistributionSumsToOne) {
  // With n = 10 untied differences, R+ ranges over 0..55; the largest
  // possible R+ has probability 2^-10 in each tail.
  std::vector<double> a(10), b(10, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i + 1);
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_NEAR(r.p, 2.0 / 1024.0, 1e-15);
}

TEST(GroupTests, MatchReferenceValues) {
  for (const auto& c : fixtures().at("groups")) {
    SCOPED_TRACE(c.at("name").get<std::string>());
    const auto g = groups_of(c);
    const auto f = one_way_anova(g);
    EXPECT_NEAR(f.statistic, c.at("anova").at("statistic").get<double>(), 1e-8);
    expect_p_near(f.p, c.at("anova").at("p").get<double>());
    const auto h = kruskal_wallis(g);
    EXPECT_NEAR(h.statistic, c.at("kruskal").at("statistic").get<double>(), 1e-8);
    expect_p_near(h.p, c.at("kruskal").at("p").get<double>());
    const auto o = groupwise_test(g);
    EXPECT_EQ(o.all_normal, c.at("all_normal").get<bool>());
    EXPECT_EQ(o.test.test_name, o.all_normal ? f.test_name : h.test_name);

    const auto d = dunn_bonferroni(g);
    const auto want = c.at("dunn").get<std::vector<std::vector<double>>>();
    ASSERT_EQ(d.size(), want.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = 0; j < d.size(); ++j) expect_p_near(d[i][j], want[i][j]);
  }
}

TEST(GroupTests, KruskalAllTied) {
  const auto h = kruskal_wallis({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}});
  EXPECT_EQ(h.statistic, 0.0);
  EXPECT_EQ(h.p, 1.0);
  const auto same = kruskal_wallis({{0.2, 0.5, 0.9, 0.4}, {0.2, 0.5, 0.9, 0.4}, {0.2, 0.5, 0.9, 0.4}});
  EXPECT_EQ(same.statistic, 0.0);
  EXPECT_EQ(same.p, 1.0);
}

TEST(GroupTests, DunnMatrixProperties) {
  RngStream rng(3);
  std::vector<std::vector<double>> g(4, std::vector<double>(12));
  for (std::size_t k = 0; k < g.size(); ++k)
    for (auto& v : g[k]) v = rng.uniform() + 0.2 * static_cast<double>(k);
  const auto d = dunn_bonferroni(g);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d[i][i], 1.0);
    for (std::size_t j = 0; j < d.size(); ++j) {
      EXPECT_EQ(d[i][j], d[j][i]);
      EXPECT_GE(d[i][j], 0.0);
      EXPECT_LE(d[i][j], 1.0);
    }
  }
}

TEST(GroupTests, RejectTooFewGroupsOrValues) {
  EXPECT_THROW(kruskal_wallis({{1, 2, 3}}), TestInapplicableError);
  EXPECT_THROW(one_way_anova({{1, 2, 3}, {1, 2}}), TestInapplicableError);
}

TEST(Ranking, DescendingMeanWithLexicographicTies) {
  const auto recs = records_for({{"NA", {0.5, 0.7}}, {"BD", {0.8, 0.8}}, {"CC", {0.6, 0.6}},
                                 {"AA", {0.6, 0.6}}});
  const auto r = rank_methods(recs, Metric::ssim);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_EQ(r[0].first, "BD");
  EXPECT_EQ(r[1].first, "AA");
  EXPECT_EQ(r[2].first, "CC");
  EXPECT_EQ(r[3].first, "NA");
  EXPECT_DOUBLE_EQ(r[0].second, 0.8);
}

TEST(StatReport, PosthocOnlyWhenOmnibusSignificant) {
  RngStream rng(11);
  std::map<std::string, std::vector<double>> strong, weak;
  for (const char* m : {"BD", "NA", "TA"})
    for (int i = 0; i < 20; ++i) {
      strong[m].push_back(rng.uniform() * 0.01 + (std::string(m) == "BD" ? 0.9 : 0.7));
      weak[m].push_back(0.7 + 0.01 * rng.uniform());
    }
  const auto s = build_stat_report(records_for(strong), Metric::ssim, "unseen / none");
  EXPECT_TRUE(s.omnibus.significant);
  ASSERT_TRUE(s.posthoc.has_value());
  EXPECT_EQ(s.pairwise.size(), 3u);
  EXPECT_EQ(s.ranking.front().first, "BD");
  const auto w = build_stat_report(records_for(weak), Metric::ssim, "unseen / none");
  EXPECT_FALSE(w.omnibus.significant);
  EXPECT_FALSE(w.posthoc.has_value());

  const json j = to_json(s);
  EXPECT_EQ(j.at("methods").size(), 3u);
  EXPECT_TRUE(j.at("posthoc").is_array());
  const std::string table = stat_table({s});
  for (const char* col : {"Section", "Comparison", "Metric", "Test used", "p-value", "Significant?"})
    EXPECT_NE(table.find(col), std::string::npos) << col;
  EXPECT_NE(table.find("Dunn (Bonferroni)"), std::string::npos);
}

TEST(StatReport, MisalignedIdsAreRejected) {
  auto recs = records_for({{"BD", {0.8, 0.7, 0.9}}, {"NA", {0.6, 0.5, 0.55}}});
  recs.back().sample_id = "other";
  try {
    build_stat_report(recs, Metric::ssim);
    FAIL() << "expected AlignmentError";
  } catch (const AlignmentError& e) {
    EXPECT_NE(std::string(e.what()).find("NA:s102"), std::string::npos) << e.what();
  }
}

TEST(StatReport, SingleMethodIsUsageError) {
  EXPECT_THROW(build_stat_report(records_for({{"BD", {0.8, 0.7, 0.9}}}), Metric::ssim), UsageError);
}

TEST(GroupTests, BonferroniNeverBelowRawDunn) {
  RngStream rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::vector<double>> g(3 + rep % 3, std::vector<double>(10));
    for (std::size_t k = 0; k < g.size(); ++k)
      for (auto& v : g[k]) v = rng.uniform() + 0.1 * static_cast<double>(k * (rep % 4));
    const auto adj = dunn_bonferroni(g);
    // Raw two-sided Dunn p values, straight from pooled ranks (no ties in continuous draws).
    std::vector<std::pair<double, std::size_t>> pooled;
    for (std::size_t k = 0; k < g.size(); ++k)
      for (double v : g[k]) pooled.emplace_back(v, k);
    std::sort(pooled.begin(), pooled.end());
    std::vector<double> rank_sum(g.size(), 0.0);
    for (std::size_t r = 0; r < pooled.size(); ++r) rank_sum[pooled[r].second] += static_cast<double>(r + 1);
    const double N = static_cast<double>(pooled.size());
    const double m = static_cast<double>(g.size() * (g.size() - 1) / 2);
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = i + 1; j < g.size(); ++j) {
        const double se = std::sqrt(N * (N + 1) / 12.0 * (2.0 / 10.0));
        const double z = std::abs(rank_sum[i] - rank_sum[j]) / 10.0 / se;
        const double raw = std::erfc(z / std::sqrt(2.0));
        EXPECT_GE(adj[i][j], raw);
        EXPECT_NEAR(adj[i][j], std::min(1.0, raw * m), 1e-12);
      }
  }
}

TEST(GroupTests, RelabellingGroupsPermutesResults) {
  RngStream rng(22);
  std::vector<std::vector<double>> g(4, std::vector<double>(9));
  for (std::size_t k = 0; k < g.size(); ++k)
    for (auto& v : g[k]) v = rng.uniform() + 0.15 * static_cast<double>(k);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::vector<double>> h;
  for (auto k : perm) h.push_back(g[k]);
  const auto a = groupwise_test(g), b = groupwise_test(h);
  EXPECT_EQ(a.test.test_name, b.test.test_name);
  EXPECT_NEAR(a.test.statistic, b.test.statistic, 1e-12);
  EXPECT_NEAR(a.test.p, b.test.p, 1e-12);
  const auto da = dunn_bonferroni(g), db = dunn_bonferroni(h);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(db[i][j], da[perm[i]][perm[j]], 1e-12);
}

TEST(GroupTests, RoutingFollowsNormalityGate) {
  RngStream rng(23);
  std::vector<std::vector<double>> g(3, std::vector<double>(30));
  for (std::size_t k = 0; k < g.size(); ++k)
    for (auto& v : g[k]) v = rng.normal() + 0.5 * static_cast<double>(k);
  for (const auto& x : g) ASSERT_TRUE(passes_normality(x, kSignificanceAlpha));
  const auto normal = groupwise_test(g);
  EXPECT_TRUE(normal.all_normal);
  EXPECT_EQ(normal.test.test_name, one_way_anova(g).test_name);
  EXPECT_EQ(normal.test.p, one_way_anova(g).p);

  // A strongly skewed group fails the gate and sends everything to Kruskal-Wallis.
  for (auto& v : g[1]) v = std::exp(3.0 * v);
  ASSERT_FALSE(passes_normality(g[1], kSignificanceAlpha));
  const auto skewed = groupwise_test(g);
  EXPECT_FALSE(skewed.all_normal);
  EXPECT_EQ(skewed.test.test_name, kruskal_wallis(g).test_name);
  EXPECT_EQ(skewed.test.p, kruskal_wallis(g).p);
}

TEST(PairedTests, RoutingFollowsNormalityOfDifferences) {
  RngStream rng(24);
  std::vector<double> a(20), b(20);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform();
    b[i] = a[i] + 0.1 + 0.05 * rng.normal();
  }
  const auto n = pairwise_compare(a, b);
  ASSERT_TRUE(n.normal);
  EXPECT_EQ(n.test.p, paired_t_test(a, b).p);
  for (std::size_t i = 0; i < a.size(); ++i) b[i] = a[i] + std::exp(4.0 * rng.normal());
  const auto w = pairwise_compare(a, b);
  ASSERT_FALSE(w.normal);
  EXPECT_EQ(w.test.p, wilcoxon_signed_rank(a, b).p);
}
