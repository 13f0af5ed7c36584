#include <gtest/gtest.h>

#include "metric_oracles.hpp"
#include "npd/detail/random.hpp"
#include "npd/eval.hpp"

using namespace npd;
using namespace npd::eval;

namespace {

EvalReport tagged(double f1, double acc, std::string model) {
  EvalReport r;
  r.macro_f1 = r.weighted_f1 = f1;
  r.accuracy = acc;
  r.model_tag = std::move(model);
  r.embedding_tag = "Word2Vec";
  return r;
}

}  // namespace

TEST(Confusion, SmallExample) {
  const std::vector<int> p = {0, 1, 1}, l = {0, 1, 0};
  const auto cm = confusion(p, l, 2);
  EXPECT_EQ(cm.counts, (std::vector<std::vector<std::uint64_t>>{{1, 1}, {0, 1}}));
}

TEST(Confusion, Errors) {
  const std::vector<int> a = {0, 1}, b = {0}, bad = {0, 2}, empty;
  EXPECT_THROW(confusion(a, b, 2), ValueError);
  EXPECT_THROW(confusion(bad, a, 2), ValueError);
  EXPECT_THROW(confusion(empty, empty, 2), ValueError);
}

TEST(Scores, MatchHandComputedOracles) {
  for (const auto& o : testkit::metric_oracles()) {
    std::vector<int> p, l;
    testkit::expand(o.counts, p, l);
    const auto cm = confusion(p, l, static_cast<int>(o.counts.size()));
    ASSERT_EQ(cm.counts, o.counts) << o.name;
    const auto r = scores(cm);
    for (std::size_t c = 0; c < o.per_class.size(); ++c) {
      EXPECT_NEAR(r.per_class[c].precision, o.per_class[c].precision, 1e-9) << o.name << " class " << c;
      EXPECT_NEAR(r.per_class[c].recall, o.per_class[c].recall, 1e-9) << o.name << " class " << c;
      EXPECT_NEAR(r.per_class[c].f1, o.per_class[c].f1, 1e-9) << o.name << " class " << c;
    }
    EXPECT_NEAR(r.macro_f1, o.macro_f1, 1e-9) << o.name;
    EXPECT_NEAR(r.weighted_f1, o.weighted_f1, 1e-9) << o.name;
    EXPECT_NEAR(r.accuracy, o.accuracy, 1e-9) << o.name;
  }
}

TEST(Scores, PaperStyleBinaryFixture) {
  ConfusionMatrix cm{{{30, 10}, {20, 40}}, {"no", "yes"}};
  const auto r = scores(cm);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 0.8);
  EXPECT_NEAR(r.per_class[1].recall, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.per_class[1].f1, 0.7273, 5e-5);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.70);
  EXPECT_EQ(r.per_class[1].support, 60u);
}

TEST(Scores, BoundsAndHarmonicMeanOnRandomMatrices) {
  npd::detail::Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + static_cast<int>(rng.index(4));
    std::vector<int> p, l;
    for (std::size_t n = 1 + rng.index(200); n > 0; --n) {
      p.push_back(static_cast<int>(rng.index(static_cast<std::uint64_t>(k))));
      l.push_back(rng.index(3) ? p.back() : static_cast<int>(rng.index(static_cast<std::uint64_t>(k))));
    }
    const auto r = scores(confusion(p, l, k));
    for (double v : {r.accuracy, r.macro_f1, r.weighted_f1}) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    for (const auto& c : r.per_class) {
      for (double v : {c.precision, c.recall, c.f1}) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
      if (c.precision > 0 && c.recall > 0) {
        ASSERT_LE(c.f1, std::max(c.precision, c.recall) + 1e-15);
        ASSERT_GE(c.f1, std::min(c.precision, c.recall) - 1e-15);
      }
    }

    // Joint permutation of predictions and labels leaves every score unchanged.
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
    std::vector<int> pp, ll;
    for (auto i : order) {
      pp.push_back(p[i]);
      ll.push_back(l[i]);
    }
    const auto s = scores(confusion(pp, ll, k));
    ASSERT_EQ(s.macro_f1, r.macro_f1);
    ASSERT_EQ(s.weighted_f1, r.weighted_f1);
    ASSERT_EQ(s.accuracy, r.accuracy);
  }
}

TEST(Scores, MacroEqualsWeightedUnderEqualSupport) {
  npd::detail::Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> p, l;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 20; ++i) {
        l.push_back(c);
        p.push_back(static_cast<int>(rng.index(3)));
      }
    const auto r = scores(confusion(p, l, 3));
    ASSERT_NEAR(r.macro_f1, r.weighted_f1, 1e-15);
  }
}

TEST(Rank, DescendingFOne) {
  const std::vector<EvalReport> reports = {tagged(0.7532, 0.75, "A"), tagged(0.6022, 0.6, "B"),
                                           tagged(0.8666, 0.87, "C"), tagged(0.7744, 0.77, "D")};
  const auto ranked = rank_reports(reports);
  std::vector<double> f1;
  for (const auto& r : ranked) f1.push_back(r.macro_f1);
  EXPECT_EQ(f1, (std::vector<double>{0.8666, 0.7744, 0.7532, 0.6022}));
}

TEST(Rank, TieRules) {
  const std::vector<EvalReport> single = {tagged(0.5, 0.5, "only")};
  EXPECT_EQ(rank_reports(single).front().model_tag, "only");
  const auto by_acc = rank_reports({tagged(0.8, 0.6, "low"), tagged(0.8, 0.9, "high")});
  EXPECT_EQ(by_acc.front().model_tag, "high");
  const auto by_tag = rank_reports({tagged(0.8, 0.9, "b"), tagged(0.8, 0.9, "a")});
  EXPECT_EQ(by_tag.front().model_tag, "a");
  EXPECT_THROW(rank_reports({}), ValueError);
}

TEST(Rank, WeightedVariantUsesWeightedScore) {
  auto a = tagged(0.9, 0.5, "a");
  a.weighted_f1 = 0.1;
  auto b = tagged(0.2, 0.5, "b");
  b.weighted_f1 = 0.8;
  EXPECT_EQ(rank_reports({a, b}, F1Variant::Weighted).front().model_tag, "b");
  EXPECT_EQ(rank_reports({a, b}, F1Variant::Macro).front().model_tag, "a");
}

TEST(Report, JsonRoundTripAndTable) {
  ConfusionMatrix cm{{{30, 10}, {20, 40}}, {"no", "yes"}};
  auto r = scores(cm);
  r.model_tag = "Balanced Random Forest";
  r.embedding_tag = "Word2Vec";
  const auto back = report_from_json(to_json(r));
  EXPECT_EQ(back.macro_f1, r.macro_f1);
  EXPECT_EQ(back.per_class.size(), 2u);
  EXPECT_EQ(back.per_class[1].name, "yes");
  const std::vector<EvalReport> ranked = {r};
  const auto table = render_table("Opinion Detection Results", ranked);
  EXPECT_NE(table.find("Word Embedding | Model"), std::string::npos);
  EXPECT_NE(table.find("69.70%"), std::string::npos);
  EXPECT_NE(table.find("70.00%"), std::string::npos);
}
