#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "serank/letor.hpp"

using namespace serank;

namespace {

Dataset parse(const std::string& text, std::size_t c, bool discard = false) {
  std::istringstream in(text);
  return parse_letor(in, c, {discard});
}

}  // namespace

TEST(Letor, GroupsByQidInFirstAppearanceOrder) {
  Dataset ds = parse(
      "2 qid:10 1:0.5 3:1.5\n"
      "0 qid:7 2:-1\n"
      "1 qid:10 1:2 2:3 3:4 # trailing comment\n"
      "\n"
      "# full-line comment\n",
      3);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.groups[0].qid, "10");
  EXPECT_EQ(ds.groups[1].qid, "7");
  EXPECT_EQ(ds.groups[0].labels, (std::vector<int>{2, 1}));
  EXPECT_EQ(ds.groups[0].features, (std::vector<double>{0.5, 0.0, 1.5, 2, 3, 4}));
  EXPECT_EQ(ds.groups[1].features, (std::vector<double>{0.0, -1.0, 0.0}));
}

TEST(Letor, MalformedLinesReportLineNumber) {
  try {
    parse("1 qid:1 1:0.5\n1 qid:1 1:abc\n", 2);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 2u);
  }
  EXPECT_THROW(parse("x qid:1 1:1\n", 2), ParseError);
  EXPECT_THROW(parse("1 1:1\n", 2), ParseError);
  EXPECT_THROW(parse("1 qid:1 0:1\n", 2), ParseError);
  EXPECT_THROW(parse("1 qid:1 11\n", 2), ParseError);
  EXPECT_THROW(parse("-1 qid:1 1:1\n", 2), ParseError);
}

TEST(Letor, FeatureIndexBeyondSchemaIsRejected) {
  EXPECT_THROW(parse("1 qid:1 3:1\n", 2), SchemaError);
}

TEST(Letor, DiscardQueriesWithoutRelevantDocuments) {
  std::string text = "0 qid:a 1:1\n0 qid:a 1:2\n1 qid:b 1:1\n0 qid:b 1:3\n";
  EXPECT_EQ(parse(text, 1, false).size(), 2u);
  Dataset kept = parse(text, 1, true);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept.groups[0].qid, "b");
}

TEST(Letor, SerializeParseRoundTrip) {
  Dataset ds = parse("3 qid:q1 1:0.1 2:1e-300 3:-7.25\n0 qid:q1 2:0.3333333333333333\n1 qid:q2 3:12345.678\n", 3);
  std::ostringstream out;
  write_letor(out, ds);
  Dataset back = parse(out.str(), 3);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t q = 0; q < ds.size(); ++q) EXPECT_EQ(back.groups[q], ds.groups[q]);
  std::ostringstream again;
  write_letor(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Letor, StatsAreTrainingMeanAndPopulationStd) {
  Dataset ds = parse("1 qid:1 1:1 2:5\n0 qid:1 1:3 2:5\n0 qid:2 1:5 2:5\n", 2);
  FeatureStats st = compute_stats(ds);
  EXPECT_DOUBLE_EQ(st.mean[0], 3.0);
  EXPECT_DOUBLE_EQ(st.stddev[0], std::sqrt(8.0 / 3.0));
  EXPECT_DOUBLE_EQ(st.stddev[1], 0.0);
  Dataset n = normalize(ds, st);
  EXPECT_DOUBLE_EQ(n.groups[0].feature(0, 0), -2.0 / std::sqrt(8.0 / 3.0));
  EXPECT_EQ(n.groups[1].feature(0, 1), 0.0);  // constant channel
  EXPECT_EQ(n.stats, st);
}

TEST(Letor, NormalizeRejectsMismatchedStats) {
  Dataset ds = parse("1 qid:1 1:1 2:5\n", 2);
  FeatureStats st{{0.0}, {1.0}};
  EXPECT_THROW(normalize(ds, st), SchemaError);
}

TEST(Letor, StatsFileRoundTrip) {
  FeatureStats st{{0.1, -2.5, 1e10}, {1.0 / 3.0, 0.0, 7.0}};
  std::stringstream io;
  write_stats(io, st);
  EXPECT_EQ(read_stats(io), st);
  std::istringstream bad("2 0.5 1.0\n");
  EXPECT_THROW(read_stats(bad), ParseError);
}

TEST(Letor, CapDocumentsKeepsSeededSubsetInOrder) {
  QueryGroup g;
  g.qid = "q";
  g.feature_count = 1;
  for (int d = 0; d < 50; ++d) {
    g.features.push_back(d);
    g.labels.push_back(d % 5);
  }
  QueryGroup a = cap_documents(g, 10, 3), b = cap_documents(g, 10, 3), c = cap_documents(g, 10, 4);
  ASSERT_EQ(a.size(), 10u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_TRUE(std::is_sorted(a.features.begin(), a.features.end()));
  for (std::size_t d = 0; d < a.size(); ++d) EXPECT_EQ(a.labels[d], static_cast<int>(a.features[d]) % 5);
  EXPECT_EQ(cap_documents(g, 100, 3), g);
}

TEST(Letor, BatchPadsAndMasks) {
  Dataset ds = parse("1 qid:a 1:1 2:2\n0 qid:a 1:3 2:4\n2 qid:b 1:5 2:6\n", 2);
  std::vector<const QueryGroup*> qs{&ds.groups[0], &ds.groups[1]};
  Batch b = make_batch(qs, 2);
  EXPECT_EQ(b.max_docs, 2u);
  EXPECT_EQ(b.rows(), 4u);
  EXPECT_EQ(b.features, (std::vector<double>{1, 2, 3, 4, 5, 6, 0, 0}));
  EXPECT_EQ(b.labels, (std::vector<int>{1, 0, 2, 0}));
  EXPECT_EQ(b.mask, (Mask{true, true, true, false}));
}

TEST(Letor, BatchIteratorVisitsEveryQueryOncePerEpoch) {
  std::string text;
  for (int q = 0; q < 7; ++q) text += "1 qid:" + std::to_string(q) + " 1:" + std::to_string(q) + "\n";
  Dataset ds = parse(text, 1);
  BatchIterator it(ds, 3, 99);
  EXPECT_EQ(it.batches_per_epoch(), 3u);
  for (std::size_t epoch = 0; epoch < 2; ++epoch) {
    std::multiset<std::size_t> seen;
    for (int i = 0; i < 3; ++i) {
      Batch b = it.next();
      EXPECT_EQ(it.epoch(), epoch);
      seen.insert(b.query_index.begin(), b.query_index.end());
    }
    EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
  }
  BatchIterator a(ds, 3, 99), b(ds, 3, 99);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.next().query_index, b.next().query_index);
}

TEST(Synthetic, SeededAndShaped) {
  SyntheticConfig cfg;
  cfg.train_queries = 20;
  cfg.valid_queries = 5;
  cfg.test_queries = 5;
  SyntheticSplits a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  ASSERT_EQ(a.train.size(), 20u);
  EXPECT_EQ(a.train.groups[0].size(), 16u);
  EXPECT_EQ(a.train.feature_count, 20u);
  EXPECT_EQ(a.train.groups, b.train.groups);
  EXPECT_EQ(a.test.groups, b.test.groups);
  EXPECT_EQ(a.train.groups[0].qid, "1");
  EXPECT_EQ(a.valid.groups[0].qid, "21");
  cfg.seed = 2;
  EXPECT_NE(generate_synthetic(cfg).train.groups, a.train.groups);
}

TEST(Synthetic, LabelsSpanTheGrades) {
  for (SyntheticTask task : {SyntheticTask::rankable, SyntheticTask::context}) {
    SyntheticConfig cfg;
    cfg.task = task;
    cfg.train_queries = 200;
    std::set<int> labels;
    for (const auto& g : generate_synthetic(cfg).train.groups) labels.insert(g.labels.begin(), g.labels.end());
    EXPECT_EQ(labels, (std::set<int>{0, 1, 2, 3, 4})) << to_string(task);
  }
}
