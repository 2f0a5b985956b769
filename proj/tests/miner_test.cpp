// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "mmembed/errors.hpp"
#include "mmembed/miner.hpp"

using namespace mmembed;

namespace {

AnnotationTable annotations_from(const std::string& text) {
  std::istringstream in(text);
  return read_annotations(in, "ann");
}

std::vector<ClickRecord> clicks_from(const std::string& text) {
  std::istringstream in(text);
  return read_click_log(in, "clicks");
}

}  // namespace

TEST(Score, SumsClicksOfCarryingItems) {
  const auto ann = annotations_from("i1\tponytail\ni2\tponytail\ni3\tbraid\n");
  const auto clk = clicks_from("hair styles\ti1\t5\nhair styles\ti2\t3\nhair styles\ti3\t0\n");
  const auto r = score_annotations("hair styles", clk, ann);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0], (ScoredAnnotation{"ponytail", 8}));
  EXPECT_EQ(r[1], (ScoredAnnotation{"braid", 0}));
}

TEST(Score, TiesLexicographicAndEmpty) {
  const auto ann = annotations_from("i1\tzebra\ni1\tapple\ni2\tmango\n");
  const auto clk = clicks_from("q\ti1\t2\nq\ti2\t2\n");
  const auto r = score_annotations("q", clk, ann);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].annotation, "apple");
  EXPECT_EQ(r[1].annotation, "mango");
  EXPECT_EQ(r[2].annotation, "zebra");
  EXPECT_TRUE(score_annotations("other", clk, ann).empty());
}

TEST(Score, MatchesBruteForce) {
  const auto ann = annotations_from(
      "i1\tred dress\ni1\tsummer\ni2\tred dress\ni3\tboots\ni4\tsummer\ni4\tboots\n"
      "i5\tscarf\ni6\tred dress\ni6\tscarf\n");
  const auto clk = clicks_from(
      "q1\ti1\t4\nq1\ti2\t1\nq1\ti4\t2\nq1\ti1\t1\n"
      "q2\ti3\t7\nq2\ti4\t3\nq2\ti5\t3\n"
      "q3\ti6\t2\nq3\ti5\t2\nq3\ti2\t0\n");
  for (const std::string q : {"q1", "q2", "q3"}) {
    std::map<std::string, std::uint64_t> brute;
    for (const auto& [item, list] : ann) {
      for (const auto& a : list) {
        for (const auto& c : clk) {
          if (c.query == q && c.item_id == item) brute[a] += c.clicks;
        }
        if (std::any_of(clk.begin(), clk.end(),
                        [&](const ClickRecord& c) { return c.query == q && c.item_id == item; })) {
          brute.emplace(a, 0);
        }
      }
    }
    std::vector<ScoredAnnotation> want;
    for (const auto& [a, s] : brute) want.push_back({a, s});
    std::sort(want.begin(), want.end(), [](const auto& x, const auto& y) {
      return x.score != y.score ? x.score > y.score : x.annotation < y.annotation;
    });
    EXPECT_EQ(score_annotations(q, clk, ann), want) << q;
  }
  // hand-aggregated: q1 = red dress 6, summer 7, boots 2
  const auto r1 = score_annotations("q1", clk, ann);
  EXPECT_EQ(r1[0], (ScoredAnnotation{"summer", 7}));
  EXPECT_EQ(r1[1], (ScoredAnnotation{"red dress", 6}));
  EXPECT_EQ(r1[2], (ScoredAnnotation{"boots", 2}));
}

TEST(Overlap, SharedStemsAreDropped) {
  const std::vector<std::string> c{"hair tutorial", "ponytail", "hair tutorials", "braided updo"};
  EXPECT_EQ(filter_overlap("hair styles", c), (std::vector<std::string>{"ponytail", "braided updo"}));
  const std::vector<std::string> l{"lunches today"};
  EXPECT_TRUE(filter_overlap("summer lunch", l).empty());
  const std::vector<std::string> s{"hairstyle"};
  EXPECT_EQ(filter_overlap("hair styles", s).size(), 1u);
}

TEST(Negative, AcceptsNonOverlapping) {
  const std::vector<std::string> pool{"pink nail"};
  Rng rng(1);
  EXPECT_EQ(sample_negative("hair style", "ponytail", pool, rng), "pink nail");
}

TEST(Negative, ExhaustionNamesPair) {
  const std::vector<std::string> pool{"hair colors"};
  Rng rng(1);
  try {
    sample_negative("hair style", "ponytail", pool, rng);
    FAIL();
  } catch (const MiningError& e) {
    EXPECT_NE(std::string(e.what()).find("hair style"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("ponytail"), std::string::npos);
  }
  const std::vector<std::string> empty;
  EXPECT_THROW(sample_negative("a", "b", empty, rng), MiningError);
}

TEST(Negative, UniformOverAcceptablePool) {
  const std::vector<std::string> pool{"pink nail", "hair colors", "wedding cake", "ponytails", "garden"};
  Rng rng(9);
  std::map<std::string, double> hits;
  const int N = 10000;
  for (int i = 0; i < N; ++i) hits[sample_negative("hair style", "ponytail", pool, rng)] += 1;
  ASSERT_EQ(hits.size(), 3u);
  const double sigma = std::sqrt(N * (1.0 / 3) * (2.0 / 3));
  for (const auto& [p, n] : hits) EXPECT_NEAR(n, N / 3.0, 3 * sigma) << p;
}

TEST(Mine, TwoQueriesTopTwo) {
  const auto ann = annotations_from(
      "i1\tponytail\ni1\thair tutorial\ni2\tponytail\ni2\tbraid\ni3\tsandwich\ni4\tpicnic\n");
  const auto clk = clicks_from(
      "summer lunch\ti3\t4\nsummer lunch\ti4\t2\n"
      "hair styles\ti1\t5\nhair styles\ti2\t3\n");
  // hair styles: ponytail 8, hair tutorial 5, braid 3
  const std::vector<std::string> pool{"pink nail"};
  MineOptions opts;
  opts.top_k = 2;
  const auto t = mine(clk, ann, pool, opts);
  const std::vector<Triplet> want{{"hair styles", "ponytail", "pink nail"},
                                  {"summer lunch", "sandwich", "pink nail"},
                                  {"summer lunch", "picnic", "pink nail"}};
  EXPECT_EQ(t, want);
  opts.top_k = 3;
  const auto t3 = mine(clk, ann, pool, opts);
  const std::vector<Triplet> want3{{"hair styles", "ponytail", "pink nail"},
                                   {"hair styles", "braid", "pink nail"},
                                   {"summer lunch", "sandwich", "pink nail"},
                                   {"summer lunch", "picnic", "pink nail"}};
  EXPECT_EQ(t3, want3);
  opts.top_k = 0;
  EXPECT_TRUE(mine(clk, ann, pool, opts).empty());
}

TEST(Mine, DeterministicPerSeedAndNoOverlap) {
  const auto ann = annotations_from(
      "i1\tponytail\ni1\tfrench braid\ni2\tbun\ni3\tpasta salad\ni3\tcold soup\ni4\ticed tea\n");
  const auto clk = clicks_from("hair styles\ti1\t5\nhair styles\ti2\t3\nsummer lunch\ti3\t4\nsummer lunch\ti4\t9\n");
  const std::vector<std::string> pool{"pink nail", "garden party", "wood table", "blue sky", "road trip",
                                      "hair color", "lunch box"};
  MineOptions opts;
  opts.top_k = 5;
  opts.seed = 3;
  const auto a = mine(clk, ann, pool, opts);
  opts.threads = 2;
  const auto b = mine(clk, ann, pool, opts);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 6u);
  for (const auto& t : a) {
    EXPECT_FALSE(shares_stem(stem_set(t.base), stem_set(t.positive)));
    EXPECT_FALSE(shares_stem(stem_set(t.base), stem_set(t.negative)));
    EXPECT_FALSE(shares_stem(stem_set(t.positive), stem_set(t.negative)));
  }
  bool differs = false;
  for (std::uint64_t s = 4; s < 10 && !differs; ++s) {
    opts.seed = s;
    differs = mine(clk, ann, pool, opts) != a;
  }
  EXPECT_TRUE(differs);
}

TEST(Votes, MajorityRule) {
  std::istringstream in(
      "a\tb\tc\tA,A,A,D,U\n"
      "d\te\tf\tA,A,D,R\n"
      "g\th\ti\tA,A,D\n"
      "j\tk\tl\tA,A\n");
  const auto recs = read_votes(in, "votes");
  ASSERT_EQ(recs.size(), 4u);
  const auto s = aggregate_votes(recs);
  const std::vector<Triplet> want{{"a", "b", "c"}, {"g", "h", "i"}};
  EXPECT_EQ(s.accepted, want);
  EXPECT_EQ(s.rejected, 2u);
  ASSERT_EQ(s.diagnostics.size(), 1u);
  EXPECT_NE(s.diagnostics[0].find("2 votes"), std::string::npos);
}

TEST(Votes, MalformedLines) {
  std::istringstream bad_vote("a\tb\tc\tA,X,A\n");
  EXPECT_THROW(read_votes(bad_vote, "v"), ParseError);
  std::istringstream fields("a\tb\tA,A,A\n");
  EXPECT_THROW(read_votes(fields, "v"), ParseError);
}

TEST(Inputs, ClickLogValidation) {
  EXPECT_THROW(clicks_from("q\ti1\t-3\n"), ParseError);
  EXPECT_THROW(clicks_from("q\ti1\n"), ParseError);
  EXPECT_THROW(annotations_from("i1\t!!!\n"), ParseError);
  const auto a = annotations_from("i1\tPony-Tail\ni1\tpony tail\n");
  EXPECT_EQ(a.at("i1"), (std::vector<std::string>{"ponytail", "pony tail"}));
}
