#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "boxoffice/error.hpp"
#include "boxoffice/explain.hpp"
#include "fixtures.hpp"

using namespace boxoffice;

namespace {

Mat mat3(std::initializer_list<double> v) {
  Mat m(3, 3);
  auto it = v.begin();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = *it++;
  return m;
}

InputSequence blank(const SequenceLayout& layout) {
  InputSequence s;
  s.slots.assign(layout.size(), Slot{0, 0.0, true});
  s.slots[0].pad = false;
  return s;
}

}  // namespace

TEST(Rollout, HandComputedTwoLayers) {
  const std::vector<Mat> a = {mat3({.5, .25, .25, .2, .6, .2, .1, .1, .8}), mat3({.4, .4, .2, .3, .3, .4, .2, .2, .6})};
  const std::vector<Mat> g = {mat3({1, -1, 2, 0, 1, 1, 1, 1, 1}), mat3({1, .5, -2, 1, 1, 1, 1, 1, 1})};
  // Gated first layer: [.5 0 .5; 0 .6 .2; .1 .1 .8]. Gated second row 0: [.4 .2 0].
  const Eigen::VectorXd r = attention_rollout(a, g);
  ASSERT_EQ(r.size(), 3);
  EXPECT_NEAR(r(0), 0.20, 1e-12);
  EXPECT_NEAR(r(1), 0.12, 1e-12);
  EXPECT_NEAR(r(2), 0.24, 1e-12);
}

TEST(Rollout, SingleLayerIsGatedAttentionRow) {
  const std::vector<Mat> a = {mat3({.2, .3, .5, 0, 1, 0, 0, 0, 1})};
  const std::vector<Mat> g = {mat3({2, -1, .5, 0, 0, 0, 0, 0, 0})};
  const Eigen::VectorXd r = attention_rollout(a, g);
  EXPECT_DOUBLE_EQ(r(0), 0.4);
  EXPECT_DOUBLE_EQ(r(1), 0.0);
  EXPECT_DOUBLE_EQ(r(2), 0.25);
}

TEST(Rollout, IdentityAttentionKeepsAllMassOnCls) {
  const std::vector<Mat> a(3, Mat::Identity(5, 5));
  const std::vector<Mat> g(3, Mat::Ones(5, 5));
  const Eigen::VectorXd r = attention_rollout(a, g);
  EXPECT_EQ(r(0), 1.0);
  EXPECT_EQ(r.tail(4).cwiseAbs().sum(), 0.0);
}

TEST(Rollout, MismatchedCapturesAreContractErrors) {
  const std::vector<Mat> a(2, Mat::Identity(3, 3));
  const std::vector<Mat> g1(1, Mat::Ones(3, 3));
  EXPECT_THROW(attention_rollout(a, g1), ContractError);
  const std::vector<Mat> g2 = {Mat::Ones(3, 3), Mat::Ones(4, 4)};
  EXPECT_THROW(attention_rollout(a, g2), ContractError);
  EXPECT_THROW(attention_rollout(std::vector<Mat>{}, std::vector<Mat>{}), ContractError);
}

TEST(Rollout, EncoderWithoutHeadIsNotFinetuned) {
  const Encoder enc(fixture::tiny_config(), 1);
  EXPECT_THROW(attention_rollout(enc, blank(enc.layout()), 1.0), NotFinetunedError);
  EXPECT_THROW(encoder_predictor(enc), NotFinetunedError);
}

TEST(Rollout, EncoderRolloutHasLayoutLengthAndIgnoresPadding) {
  Encoder enc(fixture::tiny_config(), 2);
  enc.init_head(0.5);
  Rng rng = substream(3, "head");
  for (Eigen::Index i = 0; i < enc.params().head_w.size(); ++i) enc.params().head_w(i) = standard_normal(rng);
  const auto batch = fixture::random_batch(enc, 4, 20, rng);
  for (const auto& item : batch) {
    const Eigen::VectorXd r = attention_rollout(enc, item.sequence, item.target);
    ASSERT_EQ(static_cast<std::size_t>(r.size()), enc.layout().size());
    for (std::size_t i = 0; i < enc.layout().size(); ++i) {
      EXPECT_GE(r(static_cast<Eigen::Index>(i)), 0.0);
      if (item.sequence.slots[i].pad) EXPECT_EQ(r(static_cast<Eigen::Index>(i)), 0.0);
    }
  }
}

TEST(Aggregate, MeansAcrossExamplesAndNormalizes) {
  const auto config = fixture::tiny_config();
  const SequenceLayout layout(config);
  const std::size_t budget = layout.index_of("Budget");
  const std::size_t genre = layout.genre_begin();
  std::vector<InputSequence> seqs(2, blank(layout));
  for (auto& s : seqs) {
    s.slots[budget].pad = false;
    s.slots[genre] = Slot{1, 0.0, false};
  }
  seqs[1].slots[genre].token = 2;
  std::vector<Eigen::VectorXd> per(2, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.size())));
  per[0](0) = 99.0;  // [CLS] never counts
  per[0](static_cast<Eigen::Index>(budget)) = 0.2;
  per[1](static_cast<Eigen::Index>(budget)) = 0.6;
  per[0](static_cast<Eigen::Index>(genre)) = 0.1;
  per[1](static_cast<Eigen::Index>(genre)) = 0.3;
  per[1](static_cast<Eigen::Index>(genre + 1)) = 50.0;  // padded

  const auto label = [](Family, int t) { return "g" + std::to_string(t); };
  const RolloutResult r = aggregate_rollout(per, seqs, layout, label);
  EXPECT_DOUBLE_EQ(r.variables.at("Budget"), 0.4);
  EXPECT_DOUBLE_EQ(r.variables.at("Genre"), 0.2);
  EXPECT_EQ(r.variables_normalized.at("Budget"), 1.0);
  EXPECT_DOUBLE_EQ(r.variables_normalized.at("Genre"), 0.5);
  EXPECT_DOUBLE_EQ(r.values.at("Genre=g1"), 0.1);
  EXPECT_DOUBLE_EQ(r.values.at("Genre=g2"), 0.3);
  EXPECT_EQ(r.values_normalized.at("Genre=g2"), 1.0);
  EXPECT_EQ(r.ranking().front().first, "Budget");
  EXPECT_EQ(r.variables.count("CLS"), 0u);
}

TEST(Aggregate, MaxNormalizedVariableIsExactlyOne) {
  Rng rng = substream(4, "agg");
  const auto config = fixture::tiny_config();
  const SequenceLayout layout(config);
  std::vector<InputSequence> seqs;
  std::vector<Eigen::VectorXd> per;
  for (int e = 0; e < 7; ++e) {
    InputSequence s = blank(layout);
    Eigen::VectorXd v(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t i = 0; i < layout.size(); ++i) {
      s.slots[i].pad = i != 0 && uniform_real(rng) < 0.3;
      v(static_cast<Eigen::Index>(i)) = uniform_real(rng) / 3.0;
    }
    seqs.push_back(s);
    per.push_back(v);
  }
  const RolloutResult r = aggregate_rollout(per, seqs, layout);
  double top = 0.0;
  for (const auto& [k, v] : r.variables_normalized) {
    EXPECT_LE(v, 1.0);
    top = std::max(top, v);
  }
  EXPECT_EQ(top, 1.0);
  EXPECT_EQ(r.ranking().front().second, 1.0);
}

TEST(Aggregate, EmptyInputIsDataError) {
  const SequenceLayout layout(fixture::tiny_config());
  EXPECT_THROW(aggregate_rollout({}, std::vector<InputSequence>{}, layout), DataError);
}

TEST(Lime, PerturbationFollowsTrainingMarginals) {
  const auto t = fixture::make_transparent(5, 400, 1);
  const auto& layout = t.encoder.layout();
  const auto stats = LimeStats::fit(t.train, layout);
  const std::size_t mpaa = layout.index_of("mpaa");
  std::map<int, double> share;
  for (const auto& s : t.train) share[s.slots[mpaa].token] += 1.0 / static_cast<double>(t.train.size());

  Rng rng = substream(6, "perturb");
  const std::size_t n = 4000;
  const auto samples = lime_perturb(t.test[0], stats, n, rng);
  ASSERT_EQ(samples.size(), n);
  std::map<int, double> seen;
  for (const auto& s : samples) {
    seen[s.slots[mpaa].token] += 1.0;
    // Genres and keywords are never perturbed.
    EXPECT_EQ(s.slots[layout.genre_begin()].pad, t.test[0].slots[layout.genre_begin()].pad);
    EXPECT_EQ(s.slots[layout.keyword_begin()].token, t.test[0].slots[layout.keyword_begin()].token);
  }
  for (const auto& [token, p] : share) {
    const double sd = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
    EXPECT_NEAR(seen[token], static_cast<double>(n) * p, 3.0 * sd + 1.0) << "token " << token;
  }
}

TEST(Lime, FitSkipsNamesGenresAndKeywords) {
  const auto t = fixture::make_transparent(7, 50, 1);
  const auto stats = LimeStats::fit(t.train, t.encoder.layout());
  EXPECT_TRUE(stats.fitted);
  for (const auto& f : stats.features) {
    EXPECT_NE(f.family == Family::keyword && !f.numeral, true) << f.variable;
    EXPECT_NE(f.family == Family::genre && !f.numeral, true) << f.variable;
    EXPECT_EQ(f.marginal.size(), t.train.size());
  }
  EXPECT_THROW(LimeStats::fit(std::vector<InputSequence>{}, t.encoder.layout()), DataError);
}

TEST(Lime, UnfittedStatsAreContractErrors) {
  const SequenceLayout layout(fixture::tiny_config());
  Rng rng = substream(1, "x");
  EXPECT_THROW(lime_perturb(blank(layout), LimeStats{}, 3, rng), ContractError);
}

TEST(Lime, ConstantModelHasZeroCoefficients) {
  const auto t = fixture::make_transparent(8, 200, 1);
  const auto stats = LimeStats::fit(t.train, t.encoder.layout());
  const Predictor constant = [](std::span<const InputSequence> s) { return std::vector<double>(s.size(), 4.25); };
  Rng rng = substream(9, "lime");
  LimeOptions options;
  options.samples = 300;
  const LimeResult r = lime_explain(constant, t.test[0], stats, options, rng);
  ASSERT_FALSE(r.columns.empty());
  for (const auto& c : r.columns) EXPECT_EQ(c.beta, 0.0) << c.variable;
  EXPECT_NEAR(r.intercept, 4.25, 1e-12);
}

TEST(Lime, RecoversSparseLinearModel) {
  const auto t = fixture::make_transparent(10, 300, 1);
  const auto& layout = t.encoder.layout();
  const auto stats = LimeStats::fit(t.train, layout);
  const std::size_t budget = layout.index_of("Budget");
  const Predictor model = [budget](std::span<const InputSequence> s) {
    std::vector<double> y;
    for (const auto& q : s) y.push_back(2.0 * q.slots[budget].value + 1.0);
    return y;
  };
  Rng rng = substream(11, "lime");
  LimeOptions options;
  options.samples = 2000;
  const LimeResult r = lime_explain(model, t.test[0], stats, options, rng);
  for (const auto& c : r.columns) {
    if (c.variable == "Budget") {
      EXPECT_NEAR(c.beta, 2.0, 0.02);
    } else {
      EXPECT_LT(std::abs(c.beta), 0.01) << c.variable;
    }
  }
  EXPECT_GT(r.r2, 0.999);
  const LimeSummary s = summarize_lime(std::vector<LimeResult>{r});
  EXPECT_EQ(s.ranking().front().first, "Budget");
}

TEST(Lasso, TooFewSamplesForFolds) {
  Rng rng = substream(1, "lasso");
  const Mat x = Mat::Random(3, 2);
  const Eigen::VectorXd y = Eigen::VectorXd::Random(3);
  EXPECT_THROW(lasso_cv(x, y, 5, 10, 1e-3, rng), ConvergenceError);
}

TEST(Lasso, NoiselessDataExtendsPathBelowDefaultRatio) {
  Rng rng = substream(14, "lasso-path");
  Mat x(400, 3);
  Eigen::VectorXd y(400);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = standard_normal(rng);
    y(i) = 3.0 * x(i, 0) - 0.01 * x(i, 1) + 2.0;
  }
  const LassoFit fit = lasso_cv(x, y, 5, 20, 1e-4, rng);
  EXPECT_LT(fit.lambda, 1e-4 * 3.0 * 0.5);
  EXPECT_NEAR(fit.beta(1), -0.01, 1e-5);
  EXPECT_NEAR(fit.beta(2), 0.0, 1e-6);
  EXPECT_NEAR(fit.intercept, 2.0, 1e-5);
}

TEST(Spearman, KnownValues) {
  const std::vector<double> a = {1, 2, 3, 4};
  const std::vector<double> b = {1, 3, 2, 4};
  const std::vector<double> rev = {4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(a, a), 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, rev), -1.0);
  EXPECT_DOUBLE_EQ(spearman(a, b), 0.8);
  const std::vector<double> one = {1};
  EXPECT_THROW(spearman(one, one), DataError);
  EXPECT_THROW(spearman(a, one), ShapeError);
  const std::vector<double> flat = {2, 2, 2, 2};
  EXPECT_THROW(spearman(a, flat), DataError);
}

TEST(Spearman, InvariantToMonotoneTransforms) {
  Rng rng = substream(12, "spearman");
  std::vector<double> a, b, c;
  for (int i = 0; i < 30; ++i) {
    a.push_back(uniform_real(rng));
    b.push_back(uniform_real(rng));
    c.push_back(std::exp(5.0 * b.back()));
  }
  EXPECT_NEAR(spearman(a, b), spearman(a, c), 1e-12);
}

TEST(Spearman, RankingAgreementUsesSharedVariables) {
  const std::vector<std::pair<std::string, double>> x = {{"a", 3}, {"b", 2}, {"c", 1}, {"only_x", 0.5}};
  const std::vector<std::pair<std::string, double>> y = {{"c", 1}, {"a", 9}, {"b", 4}, {"only_y", 7}};
  std::size_t shared = 0;
  EXPECT_DOUBLE_EQ(ranking_agreement(x, y, &shared), 1.0);
  EXPECT_EQ(shared, 3u);
}

TEST(Bowley, Skewness) {
  EXPECT_DOUBLE_EQ(bowley_skewness({1, 2, 3, 4, 5}), 0.0);
  EXPECT_DOUBLE_EQ(bowley_skewness({3, 3, 3}), 0.0);
  // Quartiles 1.75, 2.5, 4.75 under linear interpolation.
  EXPECT_NEAR(bowley_skewness({1, 2, 3, 10}), 0.5, 1e-12);
}

TEST(Transparent, EncoderMatchesItsLinearModel) {
  const auto t = fixture::make_transparent(13, 200, 0);
  std::vector<double> got, want;
  for (const auto& s : t.train) {
    got.push_back(t.encoder.predict(s));
    want.push_back(fixture::transparent_linear(t, s));
  }
  double worst = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    worst = std::max(worst, std::abs(got[i] - want[i]));
    spread = std::max(spread, std::abs(want[i]));
  }
  EXPECT_LT(worst, 0.02 * spread);
}
