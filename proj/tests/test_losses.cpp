#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "serank/losses.hpp"

using namespace serank;
using serank::ad::Graph;
using serank::ad::Var;

TEST(Losses, UnitValues) {
  std::vector<double> s{0.0, 0.0};
  std::vector<int> y{1, 0};
  EXPECT_NEAR(eval_pairwise_logistic(s, y).value, std::log(2.0), 1e-12);
  EXPECT_NEAR(eval_softmax_ce(s, y, Gain::pow2minus1).value, std::log(2.0), 1e-12);
  std::vector<double> one{3.7};
  std::vector<int> rel{2};
  EXPECT_EQ(eval_softmax_ce(one, rel, Gain::pow2minus1).value, 0.0);
  EXPECT_EQ(eval_pairwise_logistic(one, rel).value, 0.0);
}

TEST(Losses, MatchPairLoopAndDirectSoftmaxOracles) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + trial % 9;
    std::vector<double> s = oracle::random_vector(rng, n, -3.0, 3.0);
    std::vector<int> y = oracle::random_labels(rng, n);
    EXPECT_NEAR(eval_pairwise_logistic(s, y).value, oracle::pairwise_logistic(s, y), 1e-10);
    EXPECT_NEAR(eval_pairwise_logistic_lambda(s, y, Gain::pow2minus1).value, oracle::pairwise_logistic_lambda(s, y),
                1e-10);
    EXPECT_NEAR(eval_softmax_ce(s, y, Gain::pow2minus1).value, oracle::softmax_ce(s, y), 1e-10);
  }
}

TEST(Losses, AnalyticGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  LossSpec specs[] = {{LossKind::pairwise_logistic, Gain::pow2minus1, true},
                      {LossKind::pairwise_logistic_lambda, Gain::pow2minus1, true},
                      {LossKind::pairwise_logistic_lambda, Gain::identity, false},
                      {LossKind::softmax_ce, Gain::pow2minus1, true},
                      {LossKind::softmax_ce, Gain::identity, true}};
  for (const LossSpec& spec : specs) {
    std::vector<double> s = oracle::random_vector(rng, 7, -2.0, 2.0);
    std::vector<int> y = oracle::random_labels(rng, 7);
    y[0] = 3;
    LossEval e = eval_loss(spec, s, y);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double h = 1e-6;
      std::vector<double> sp = s, sm = s;
      sp[i] += h;
      sm[i] -= h;
      double numeric = (eval_loss(spec, sp, y).value - eval_loss(spec, sm, y).value) / (2 * h);
      EXPECT_NEAR(e.grad[i], numeric, 1e-6) << to_string(spec.kind) << " doc " << i;
    }
  }
}

TEST(Losses, SoftplusIsStable) {
  EXPECT_EQ(softplus(1000.0), 1000.0);
  EXPECT_GT(softplus(-1000.0), -1e-300);
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  std::vector<double> s{500.0, -500.0};
  std::vector<int> y{0, 1};
  LossEval e = eval_pairwise_logistic(s, y);
  EXPECT_NEAR(e.value, 1000.0, 1e-9);
  EXPECT_TRUE(std::isfinite(e.grad[0]));
}

TEST(Losses, SoftmaxSkipsQueriesWithoutGain) {
  std::vector<double> s{1.0, 2.0};
  std::vector<int> y{0, 0};
  LossEval e = eval_softmax_ce(s, y, Gain::pow2minus1);
  EXPECT_TRUE(e.skipped);
  EXPECT_EQ(e.value, 0.0);
  EXPECT_EQ(e.grad, (std::vector<double>{0.0, 0.0}));
}

TEST(Losses, LambdaWeightsUseCurrentRanks) {
  // Swapping two equal-gain-difference pairs at different depths changes NDCG
  // by different amounts; the loss reflects the weighting.
  std::vector<int> y{2, 0, 0};
  std::vector<double> top{1.0, 0.0, -1.0}, bottom{-1.0, 0.0, 1.0};
  double a = eval_pairwise_logistic_lambda(top, y, Gain::pow2minus1).value;
  double b = eval_pairwise_logistic_lambda(bottom, y, Gain::pow2minus1).value;
  EXPECT_NEAR(a, oracle::pairwise_logistic_lambda(top, y), 1e-12);
  EXPECT_NEAR(b, oracle::pairwise_logistic_lambda(bottom, y), 1e-12);
  EXPECT_LT(a, b);
}

TEST(Losses, RankPositionsAreStable) {
  std::vector<double> s{0.5, 2.0, 0.5, -1.0};
  EXPECT_EQ(rank_positions(s), (std::vector<std::size_t>{2, 1, 3, 4}));
}

TEST(Losses, BatchLossIsMeanOverQueriesAndIgnoresPadding) {
  // Two queries, segment length 3; query 0 has a padded row.
  std::vector<double> s{0.3, -0.2, 99.0, 1.0, 0.5, -0.5};
  std::vector<int> y{1, 0, 4, 0, 2, 1};
  Mask mask{true, true, false, true, true, true};
  for (LossKind kind : {LossKind::pairwise_logistic, LossKind::pairwise_logistic_lambda, LossKind::softmax_ce}) {
    LossSpec spec{kind, Gain::pow2minus1, true};
    Graph g;
    Var scores = g.parameter(Tensor::column(s));
    LossStats st;
    Var l = ranking_loss(scores, y, mask, 3, spec, &st);
    double q0 = eval_loss(spec, std::vector<double>{0.3, -0.2}, std::vector<int>{1, 0}).value;
    double q1 = eval_loss(spec, std::vector<double>{1.0, 0.5, -0.5}, std::vector<int>{0, 2, 1}).value;
    EXPECT_NEAR(l.value()[0], (q0 + q1) / 2.0, 1e-14);
    EXPECT_EQ(st.queries, 2u);
    g.backward(l);
    EXPECT_EQ(scores.grad()[2], 0.0);
  }
}

TEST(Losses, BatchLossCountsSkippedQueries) {
  std::vector<double> s{0.0, 0.0, 1.0, 2.0};
  std::vector<int> y{1, 0, 0, 0};
  Graph g;
  LossStats st;
  Var l = ranking_loss(g.parameter(Tensor::column(s)), y, Mask(4, true), 2, {}, &st);
  EXPECT_EQ(st.skipped, 1u);
  EXPECT_NEAR(l.value()[0], std::log(2.0) / 2.0, 1e-14);
}

TEST(Losses, EmptyQueryAndShapeErrors) {
  Graph g;
  Var s = g.parameter(Tensor::column({1.0, 2.0}));
  std::vector<int> y{1, 0};
  EXPECT_THROW(ranking_loss(s, y, Mask{false, false}, 0, {}), InvalidQueryError);
  std::vector<int> short_y{1};
  EXPECT_THROW(ranking_loss(s, short_y, Mask{true, true}, 0, {}), DimensionError);
}

TEST(Losses, NamesRoundTrip) {
  for (LossKind k : {LossKind::pairwise_logistic, LossKind::pairwise_logistic_lambda, LossKind::softmax_ce})
    EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  EXPECT_EQ(parse_gain(to_string(Gain::identity)), Gain::identity);
  EXPECT_THROW(parse_loss_kind("hinge"), ConfigError);
}
