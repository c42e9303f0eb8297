#include <gtest/gtest.h>

#include <random>

#include "slotalign/metrics.hpp"

using namespace slotalign;
using namespace slotalign::metrics;

namespace {

// Independent oracle: plain double accumulation.
double naive_mean_abs(const std::vector<long long>& a, const std::vector<long long>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] > b[i] ? double(a[i] - b[i]) : double(b[i] - a[i]);
  return s / static_cast<double>(a.size());
}

struct RandomCorpus {
  std::vector<post::AlignmentResult> preds;
  std::map<std::string, std::vector<synth::Word>> refs;
};

RandomCorpus random_corpus(std::mt19937_64& rng, std::size_t n_utts) {
  RandomCorpus c;
  for (std::size_t u = 0; u < n_utts; ++u) {
    const std::string id = "u" + std::to_string(u);
    const int n = 1 + static_cast<int>(rng() % 6);
    post::AlignmentResult r{id, 80, {}};
    std::vector<synth::Word> ref;
    for (int i = 0; i < n; ++i) {
      const int s = static_cast<int>(rng() % 3000);
      ref.push_back({0, s, s + static_cast<int>(rng() % 500)});
      const int ps = 80 * static_cast<int>(rng() % 40);
      r.words.push_back({i, 0, ps, ps + 80 * static_cast<int>(rng() % 8)});
    }
    c.preds.push_back(r);
    c.refs[id] = ref;
  }
  return c;
}

}  // namespace

TEST(Aas, Examples) {
  const auto r = aas(std::vector<int>{100, 240}, std::vector<int>{80, 200});
  EXPECT_EQ(r.shifts_ms, (std::vector<long long>{20, 40}));
  EXPECT_EQ(r.aas_ms, 30.0);
  EXPECT_EQ(r.n, 2u);
  EXPECT_EQ(aas(std::vector<int>{5, 7}, std::vector<int>{5, 7}).aas_ms, 0.0);
}

TEST(Aas, Errors) {
  EXPECT_THROW(aas(std::vector<int>{1}, std::vector<int>{1, 2}), InvalidInput);
  EXPECT_THROW(aas(std::vector<int>{}, std::vector<int>{}), InvalidInput);
}

TEST(Aas, MatchesNaiveOracle) {
  std::mt19937_64 rng(1);
  std::vector<long long> a(10000), b(10000);
  for (auto& v : a) v = static_cast<long long>(rng() % 300000);
  for (auto& v : b) v = static_cast<long long>(rng() % 300000);
  EXPECT_NEAR(aas(a, b).aas_ms, naive_mean_abs(a, b), 1e-9);
}

TEST(Aas, SymmetryTranslationAndScaling) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<long long> a(1 + rng() % 50), b(a.size());
    for (auto& v : a) v = static_cast<long long>(rng() % 10000);
    for (auto& v : b) v = static_cast<long long>(rng() % 10000);
    const double base = aas(a, b).aas_ms;
    EXPECT_EQ(aas(b, a).aas_ms, base);
    const long long c = static_cast<long long>(rng() % 5000);
    auto at = a, bt = b;
    for (auto& v : at) v += c;
    for (auto& v : bt) v += c;
    EXPECT_EQ(aas(at, bt).aas_ms, base);
    for (auto& v : at) v = (v - c) * 3;
    for (auto& v : bt) v = (v - c) * 3;
    EXPECT_NEAR(aas(at, bt).aas_ms, 3 * base, 1e-9);
    for (long long s : aas(a, b).shifts_ms) EXPECT_GE(s, 0);
  }
}

TEST(AasCorpus, OneUtteranceEqualsPlainAas) {
  post::AlignmentResult r{"a", 80, {{0, 1, 80, 400}, {1, 1, 480, 800}}};
  std::map<std::string, std::vector<synth::Word>> refs{{"a", {{1, 100, 380}, {1, 500, 900}}}};
  const auto c = aas_corpus({r}, refs);
  EXPECT_EQ(c.aas_ms, aas(std::vector<int>{80, 400, 480, 800}, std::vector<int>{100, 380, 500, 900}).aas_ms);
  EXPECT_EQ(aas_corpus({r}, refs, Granularity::start).aas_ms, 20.0);
  EXPECT_EQ(aas_corpus({r}, refs, Granularity::end).aas_ms, 60.0);
}

TEST(AasCorpus, PoolsOverSlotsNotUtterances) {
  std::map<std::string, std::vector<synth::Word>> refs{{"a", {{0, 0, 0}}}, {"b", {{0, 0, 0}}}};
  post::AlignmentResult a{"a", 10, {{0, 0, 10, std::nullopt}}};
  post::AlignmentResult b{"b", 10, {{0, 0, 30, std::nullopt}}};
  EXPECT_EQ(aas_corpus({a, b}, refs).aas_ms, 20.0);

  // 1 slot shifted by 10 and 3 slots shifted by 30: micro 25, macro 20.
  refs["c"] = {{0, 0, 0}, {0, 0, 0}};
  post::AlignmentResult c{"c", 10, {{0, 0, 30, 30}, {1, 0, 30, std::nullopt}}};
  const auto r = aas_corpus({a, c}, refs);
  EXPECT_EQ(r.aas_ms, 25.0);
  ASSERT_TRUE(r.macro_aas_ms.has_value());
  EXPECT_EQ(*r.macro_aas_ms, 20.0);
}

TEST(AasCorpus, PooledEqualsConcatenationAndWeightedCombination) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_corpus(rng, 1 + rng() % 20);
    std::vector<long long> all_p, all_r;
    double weighted = 0;
    std::size_t total = 0;
    for (const auto& p : c.preds) {
      std::vector<long long> pp, rr;
      collect_pairs(p, c.refs.at(p.id), Granularity::both, pp, rr);
      const auto one = aas(pp, rr);
      weighted += one.aas_ms * static_cast<double>(one.n);
      total += one.n;
      all_p.insert(all_p.end(), pp.begin(), pp.end());
      all_r.insert(all_r.end(), rr.begin(), rr.end());
    }
    const auto pooled = aas_corpus(c.preds, c.refs);
    EXPECT_EQ(pooled.aas_ms, aas(all_p, all_r).aas_ms);
    EXPECT_NEAR(pooled.aas_ms, weighted / static_cast<double>(total), 1e-9);
    EXPECT_NEAR(pooled.aas_ms, naive_mean_abs(all_p, all_r), 1e-9);
  }
}

TEST(AasCorpus, UnmatchedIdsAreReported) {
  std::map<std::string, std::vector<synth::Word>> refs{{"a", {{0, 0, 80}}}};
  post::AlignmentResult x{"x", 80, {{0, 0, 0, 80}}};
  post::AlignmentResult y{"y", 80, {{0, 0, 0, 80}}};
  try {
    aas_corpus({x, y}, refs);
    FAIL();
  } catch (const UnmatchedIds& e) {
    EXPECT_EQ(e.ids(), (std::vector<std::string>{"x", "y"}));
  }
  post::AlignmentResult a{"a", 80, {{3, 0, 0, 80}}};
  EXPECT_THROW(aas_corpus({a}, refs), StructureError);
}

TEST(Granularity, Parse) {
  EXPECT_EQ(parse_granularity("start"), Granularity::start);
  EXPECT_EQ(parse_granularity("both"), Granularity::both);
  EXPECT_THROW(parse_granularity("middle"), ConfigError);
}

TEST(CompareTable, OneSystem) {
  const auto t = compare_table({"A"}, {{"test", {30.0}}});
  EXPECT_EQ(t, "AAS (ms)      A\ntest      30.0*\n");
}

TEST(CompareTable, LowestIsFlaggedAndOutputIsDeterministic) {
  const std::vector<ComparisonRow> rows{{"set1", {30.0, 20.0}}, {"set2", {std::nullopt, 55.5}}};
  const auto t = compare_table({"A", "B"}, rows);
  EXPECT_NE(t.find("20.0*"), std::string::npos);
  EXPECT_EQ(t.find("30.0*"), std::string::npos);
  EXPECT_NE(t.find("55.5*"), std::string::npos);
  EXPECT_NE(t.find(" -"), std::string::npos);
  EXPECT_EQ(t, compare_table({"A", "B"}, rows));
  EXPECT_THROW(compare_table({}, {}), InvalidInput);
  EXPECT_THROW(compare_table({"A"}, {{"x", {1.0, 2.0}}}), InvalidInput);
}

TEST(ReportJson, Fields) {
  AASReport r;
  r.n = 4;
  r.aas_ms = 12.5;
  const auto j = report_json(r, "abc");
  EXPECT_EQ(j.dump(), "{\"n_slots\":4,\"aas_ms\":12.5,\"config_hash\":\"abc\"}");
}
