#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "serank/models.hpp"

using namespace serank;
using serank::ad::Graph;
using serank::ad::Var;

namespace {

ModelSpec small_spec(Variant v, std::size_t c = 6) {
  ModelSpec s;
  s.variant = v;
  s.input_width = c;
  s.hidden_widths = {8, 4};
  s.seed = 17;
  return s;
}

Tensor random_query(std::mt19937_64& rng, std::size_t docs, std::size_t c) {
  return Tensor({docs, c}, oracle::random_vector(rng, docs * c, -2.0, 2.0));
}

// Moves batch-norm moving statistics away from (0, 1) so inference exercises them.
void perturb_moving_stats(ScoringModel& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& [name, t] : m.params)
    for (double& v : t.data())
      if (name.find(".moving_") != std::string::npos) v = name.find("var") != std::string::npos ? u(rng) : u(rng) - 1.0;
}

}  // namespace

TEST(Models, PlanAndParameterShapes) {
  ModelSpec s = small_spec(Variant::serank_b);
  ScoringModel m = init_model(s);
  EXPECT_EQ(m.param("se_in.w1").shape(), (Shape{6, 3}));
  EXPECT_EQ(m.param("se_in.w2").shape(), (Shape{3, 6}));
  EXPECT_EQ(m.param("fc0.weight").shape(), (Shape{6, 8}));
  EXPECT_EQ(m.param("se0.w1").shape(), (Shape{8, 4}));
  EXPECT_EQ(m.param("fc1.weight").shape(), (Shape{8, 4}));
  EXPECT_EQ(m.param("out.weight").shape(), (Shape{4, 1}));
  EXPECT_EQ(m.param("bn1.moving_var").data(), (std::vector<double>(4, 1.0)));

  ModelSpec ne = small_spec(Variant::serank_no_excitation);
  ScoringModel mne = init_model(ne);
  EXPECT_EQ(mne.param("fc0.weight").shape(), (Shape{12, 8}));
  EXPECT_EQ(mne.param("out.weight").shape(), (Shape{8, 1}));

  ModelSpec g = small_spec(Variant::gsf);
  g.group_size = 3;
  ScoringModel mg = init_model(g);
  EXPECT_EQ(mg.param("fc0.weight").shape(), (Shape{18, 8}));
  EXPECT_EQ(mg.param("out.weight").shape(), (Shape{4, 3}));
  EXPECT_EQ(mg.params.count("se_in.w1"), 0u);
}

TEST(Models, GlorotBoundsAndZeroBiases) {
  ModelSpec s;
  s.variant = Variant::gsf;
  s.input_width = 136;
  s.seed = 5;
  ScoringModel m = init_model(s);
  const Tensor& w = m.param("fc0.weight");
  double bound = std::sqrt(6.0 / (136.0 + 64.0));
  EXPECT_LE(w.max_abs(), bound);
  EXPECT_GT(w.max_abs(), 0.95 * bound);
  double mean = std::accumulate(w.data().begin(), w.data().end(), 0.0) / static_cast<double>(w.size());
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_EQ(m.param("fc0.bias").max_abs(), 0.0);
  EXPECT_EQ(m.param("bn0.gamma").data(), std::vector<double>(64, 1.0));
  EXPECT_EQ(init_model(s).params, m.params);
}

TEST(Models, ExcitationHandValue) {
  Graph g;
  Var u = g.constant(Tensor::row({2.0, 0.0}));
  Var w1 = g.constant(Tensor::column({1.0, 0.0}));
  Var w2 = g.constant(Tensor::row({2.0, -2.0}));
  Var s = excite(u, w1, w2);
  EXPECT_NEAR(s.value()[0], 0.9820137900379085, 1e-15);
  EXPECT_NEAR(s.value()[1], 0.01798620996209156, 1e-15);

  // SE on X = [[3, 1], [1, -1]]: mean pool gives U = [2, 0], so the same gates apply.
  Var x = g.constant(Tensor::from_rows({{3, 1}, {1, -1}}));
  Var y = se_block(x, Mask(2, true), w1, w2, ad::Reduce::mean);
  EXPECT_NEAR(y.value()(0, 0), 3 * 0.9820137900379085, 1e-14);
  EXPECT_NEAR(y.value()(1, 1), -0.01798620996209156, 1e-15);
}

TEST(Models, SeBHandValue) {
  // Per-document reduction relu(x W1): docs give 4 and 0, pooled mean 2.
  Graph g;
  Var x = g.constant(Tensor::from_rows({{3, 1}, {1, -1}}));
  Var w1 = g.constant(Tensor::column({1.0, 1.0}));
  Var w2 = g.constant(Tensor::row({2.0, -2.0}));
  Var y = se_b_block(x, Mask(2, true), w1, w2, ad::Reduce::mean);
  double s0 = 1.0 / (1.0 + std::exp(-4.0)), s1 = 1.0 / (1.0 + std::exp(4.0));
  EXPECT_NEAR(y.value()(0, 0), 3 * s0, 1e-14);
  EXPECT_NEAR(y.value()(0, 1), 1 * s1, 1e-14);
  EXPECT_NEAR(y.value()(1, 0), 1 * s0, 1e-14);

  Var z = se_no_excitation_block(x, Mask(2, true), w1, w2, ad::Reduce::mean);
  ASSERT_EQ(z.value().shape(), (Shape{2, 4}));
  EXPECT_EQ(z.value()(1, 0), 1.0);
  EXPECT_NEAR(z.value()(1, 2), s0, 1e-15);
  EXPECT_NEAR(z.value()(1, 3), s1, 1e-15);
}

TEST(Models, ReluOuterExcitation) {
  Graph g;
  Var u = g.constant(Tensor::row({2.0, 0.0}));
  Var s = excite(u, g.constant(Tensor::column({1.0, 0.0})), g.constant(Tensor::row({2.0, -2.0})),
                 ExciteActivation::relu);
  EXPECT_EQ(s.value().data(), (std::vector<double>{4.0, 0.0}));
}

TEST(Models, PermutationEquivariance) {
  std::mt19937_64 rng(8);
  for (Variant v : {Variant::univariate, Variant::serank, Variant::serank_b, Variant::serank_no_squeeze,
                    Variant::serank_no_excitation}) {
    ScoringModel m = init_model(small_spec(v));
    perturb_moving_stats(m, rng);
    Tensor x = random_query(rng, 7, 6);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor xp({7, 6});
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t c = 0; c < 6; ++c) xp(i, c) = x(perm[i], c);
    std::vector<double> s = score(m, x, Mask(7, true)), sp = score(m, xp, Mask(7, true));
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(sp[i], s[perm[i]], 1e-12) << to_string(v);
  }
}

TEST(Models, UnivariateAndNoSqueezeScoresAreIndependent) {
  std::mt19937_64 rng(9);
  for (Variant v : {Variant::univariate, Variant::serank_no_squeeze}) {
    ScoringModel m = init_model(small_spec(v));
    perturb_moving_stats(m, rng);
    Tensor x = random_query(rng, 5, 6);
    std::vector<double> base = score(m, x, Mask(5, true));
    Tensor y = x;
    for (std::size_t c = 0; c < 6; ++c) y(3, c) += 10.0;
    std::vector<double> changed = score(m, y, Mask(5, true));
    for (std::size_t i = 0; i < 5; ++i) {
      if (i == 3) continue;
      EXPECT_EQ(changed[i], base[i]) << to_string(v);
    }
  }
}

TEST(Models, SerankScoresDependOnOtherDocuments) {
  std::mt19937_64 rng(10);
  for (Variant v : {Variant::serank, Variant::serank_b, Variant::serank_no_excitation}) {
    // default widths: with very narrow bottlenecks every reduced unit can be dead
    ModelSpec s = small_spec(v);
    s.hidden_widths = {64, 32, 16};
    ScoringModel m = init_model(s);
    Tensor x = random_query(rng, 2, 6);
    double before = score(m, x, Mask(2, true))[0];
    for (std::size_t c = 0; c < 6; ++c) x(1, c) += 3.0;
    EXPECT_GT(std::abs(score(m, x, Mask(2, true))[0] - before), 1e-6) << to_string(v);
  }
}

TEST(Models, MaskedDocumentsDoNotInfluenceScores) {
  std::mt19937_64 rng(12);
  ScoringModel m = init_model(small_spec(Variant::serank_b));
  Tensor x = random_query(rng, 4, 6);
  Mask mask{true, true, false, true};
  std::vector<double> a = score(m, x, mask);
  for (std::size_t c = 0; c < 6; ++c) x(2, c) = 1e6;
  std::vector<double> b = score(m, x, mask);
  EXPECT_EQ(a[0], b[0]);
  EXPECT_EQ(a[3], b[3]);
  EXPECT_EQ(b[2], -std::numeric_limits<double>::infinity());
}

TEST(Models, BatchedForwardMatchesPerQueryScoring) {
  std::mt19937_64 rng(13);
  ScoringModel m = init_model(small_spec(Variant::serank_b));
  perturb_moving_stats(m, rng);
  Tensor q0 = random_query(rng, 3, 6), q1 = random_query(rng, 2, 6);
  Tensor batch = Tensor::zeros(6, 6);
  for (std::size_t c = 0; c < 6; ++c) {
    for (std::size_t d = 0; d < 3; ++d) batch(d, c) = q0(d, c);
    for (std::size_t d = 0; d < 2; ++d) batch(3 + d, c) = q1(d, c);
  }
  Mask mask{true, true, true, true, true, false};
  Graph g;
  ParamVars p = bind_parameters(g, m);
  ForwardOutput out = forward(m, p, g.constant(batch), mask, 3, Mode::infer);
  std::vector<double> s0 = score(m, q0, Mask(3, true)), s1 = score(m, q1, Mask(2, true));
  for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(out.scores.value()[d], s0[d], 1e-13);
  for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(out.scores.value()[3 + d], s1[d], 1e-13);
}

TEST(Models, Gsf1EqualsUnivariate) {
  std::mt19937_64 rng(14);
  ModelSpec u = small_spec(Variant::univariate), g1 = small_spec(Variant::gsf);
  g1.group_size = 1;
  ScoringModel mu = init_model(u), mg = init_model(g1);
  EXPECT_EQ(mu.params, mg.params);
  Tensor x = random_query(rng, 6, 6);
  EXPECT_EQ(score(mu, x, Mask(6, true)), score(mg, x, Mask(6, true)));
}

TEST(Models, Gsf2MatchesHandBuiltWindows) {
  std::mt19937_64 rng(15);
  ModelSpec s = small_spec(Variant::gsf, 2);
  s.group_size = 2;
  s.hidden_widths = {3};
  s.batch_norm = false;
  ScoringModel m = init_model(s);
  for (auto& [name, t] : m.params) t.data() = oracle::random_vector(rng, t.size());
  const std::size_t n = 4, c = 2;
  Tensor x = random_query(rng, n, c);
  // window w covers docs (w, w+1 mod n); output unit t scores the doc at offset t
  std::vector<std::vector<double>> out(n);
  for (std::size_t w = 0; w < n; ++w) {
    std::vector<double> in;
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t j = 0; j < c; ++j) in.push_back(x((w + t) % n, j));
    std::vector<double> h = oracle::matmul(in, m.param("fc0.weight").data(), 1, 2 * c, 3);
    for (std::size_t j = 0; j < 3; ++j) h[j] = std::max(0.0, h[j] + m.param("fc0.bias")[j]);
    out[w] = oracle::matmul(h, m.param("out.weight").data(), 1, 3, 2);
    for (std::size_t j = 0; j < 2; ++j) out[w][j] += m.param("out.bias")[j];
  }
  std::vector<double> got = score(m, x, Mask(n, true));
  for (std::size_t d = 0; d < n; ++d) EXPECT_NEAR(got[d], (out[d][0] + out[(d + n - 1) % n][1]) / 2.0, 1e-13);
}

TEST(Models, GsfWindowsWrapWhenGroupExceedsQuery) {
  std::mt19937_64 rng(16);
  ModelSpec s = small_spec(Variant::gsf, 3);
  s.group_size = 4;
  ScoringModel m = init_model(s);
  std::vector<double> one = score(m, random_query(rng, 1, 3), Mask(1, true));
  EXPECT_TRUE(std::isfinite(one[0]));
  std::vector<double> two = score(m, random_query(rng, 2, 3), Mask(2, true));
  EXPECT_TRUE(std::isfinite(two[0]) && std::isfinite(two[1]));
}

TEST(Models, GsfTrainModeIsSeeded) {
  std::mt19937_64 rng(18);
  ModelSpec s = small_spec(Variant::gsf);
  s.group_size = 2;
  ScoringModel m = init_model(s);
  Tensor x = random_query(rng, 6, 6);
  EXPECT_EQ(score(m, x, Mask(6, true), Mode::train, 5), score(m, x, Mask(6, true), Mode::train, 5));
  EXPECT_NE(score(m, x, Mask(6, true), Mode::train, 5), score(m, x, Mask(6, true), Mode::train, 6));
}

TEST(Models, BatchNormTrainStatisticsAndMovingAverage) {
  std::mt19937_64 rng(19);
  ModelSpec s = small_spec(Variant::univariate);
  ScoringModel m = init_model(s);
  Tensor x = random_query(rng, 5, 6);
  Mask mask{true, true, true, false, true};
  Graph g;
  ParamVars p = bind_parameters(g, m);
  ForwardOutput out = forward(m, p, g.constant(x), mask, 0, Mode::train);
  ASSERT_EQ(out.batch_norm.size(), 2u);
  // fc0 pre-activations over the masked-in rows
  std::vector<double> pre = oracle::matmul(x.data(), m.param("fc0.weight").data(), 5, 6, 8);
  const BatchNormObservation& bn0 = out.batch_norm[0];
  for (std::size_t j = 0; j < 8; ++j) {
    double mean = 0, var = 0;
    for (std::size_t r : {0, 1, 2, 4}) mean += pre[r * 8 + j] / 4.0;
    for (std::size_t r : {0, 1, 2, 4}) var += (pre[r * 8 + j] - mean) * (pre[r * 8 + j] - mean) / 4.0;
    EXPECT_NEAR(bn0.mean[j], mean, 1e-13);
    EXPECT_NEAR(bn0.var[j], var, 1e-13);
  }
  update_moving_stats(m, out.batch_norm);
  EXPECT_NEAR(m.param("bn0.moving_mean")[0], 0.01 * bn0.mean[0], 1e-15);
  EXPECT_NEAR(m.param("bn0.moving_var")[0], 0.99 + 0.01 * bn0.var[0], 1e-15);
}

TEST(Models, SpecValidation) {
  ModelSpec s = small_spec(Variant::serank);
  s.shrinkage = 7;
  EXPECT_THROW(init_model(s), ConfigError);
  s.se_on_input = false;
  s.hidden_widths = {8};
  EXPECT_NO_THROW(init_model(s));
  ModelSpec g = small_spec(Variant::gsf);
  g.group_size = 0;
  EXPECT_THROW(plan_model(g), ConfigError);
  EXPECT_THROW(parse_variant("transformer"), ConfigError);
}

TEST(Models, WrongInputWidthThrows) {
  ScoringModel m = init_model(small_spec(Variant::univariate));
  EXPECT_THROW(score(m, Tensor::zeros(3, 5), Mask(3, true)), DimensionError);
}

TEST(Models, SpecKeyValueRoundTrip) {
  ModelSpec s = small_spec(Variant::serank_no_excitation);
  s.pooling = ad::Reduce::max;
  s.excite_activation = ExciteActivation::relu;
  s.batch_norm = false;
  ModelSpec back;
  for (const auto& [k, v] : spec_to_kv(s)) ASSERT_TRUE(apply_spec_kv(back, k, v));
  EXPECT_EQ(back, s);
}

TEST(Models, TensorFileRoundTripAndBadMagic) {
  Tensor t = Tensor::from_rows({{1.5, -0.0}, {1e-310, 3.141592653589793}});
  std::stringstream io;
  write_tensor(io, t);
  std::string bytes = io.str();
  EXPECT_EQ(bytes.substr(0, 8), "SRKTNSR1");
  EXPECT_EQ(bytes.size(), 8u + 8u + 16u + 32u);
  EXPECT_EQ(read_tensor(io), t);
  std::stringstream bad("NOTATENSOR");
  EXPECT_THROW(read_tensor(bad), std::runtime_error);
}

TEST(Models, CheckpointRoundTripIsBitExact) {
  std::mt19937_64 rng(20);
  ModelSpec s = small_spec(Variant::serank_b);
  ScoringModel m = init_model(s);
  for (auto& [name, t] : m.params) t.data() = oracle::random_vector(rng, t.size());
  FeatureStats stats{oracle::random_vector(rng, 6), oracle::random_vector(rng, 6, 0.1, 2.0)};
  auto dir = std::filesystem::temp_directory_path() / "serank_test_checkpoint";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, m, stats);
  Checkpoint ck = load_checkpoint(dir);
  EXPECT_EQ(ck.model.spec, m.spec);
  EXPECT_EQ(ck.model.params, m.params);
  EXPECT_EQ(ck.stats, stats);
  Tensor x = random_query(rng, 5, 6);
  EXPECT_EQ(score(ck.model, x, Mask(5, true)), score(m, x, Mask(5, true)));
  std::filesystem::remove_all(dir);
}
