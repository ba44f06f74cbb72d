#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>

#include "boxoffice/dataset.hpp"
#include "boxoffice/error.hpp"
#include "boxoffice/random.hpp"
#include "fixtures.hpp"

using namespace boxoffice;
using fixture::movie;

namespace {

const char* kThreeMovies =
    R"({"id":"m1","title":"One","revenue_usd":1000000,"budget_usd":250000,"release_date":"2001-03-04","genres":["Drama"],"mpaa":"PG","keywords":["Heist","heist"," space "],"directors":["d1"],"actors":[{"name":"a1","gender":"F","age":30}]})"
    "\n"
    R"({"id":"m2","revenue_usd":5,"release_date":"2002-12-31","release_year":2002,"release_month":12,"franchise":true,"franchise_name":"Saga"})"
    "\n"
    R"({"id":"m3","revenue_usd":0,"budget_usd":null,"release_date":"2003-01-01","actors":[{"name":"a"},{"name":"b"},{"name":"c"},{"name":"d"}]})"
    "\n";

template <typename E>
std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const E& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected exception";
  return {};
}

}  // namespace

TEST(LoadDataset, EmptyInputGivesEmptyCorpus) {
  EXPECT_TRUE(parse_dataset("").empty());
  const auto dir = fixture::scratch_dir("dataset_empty");
  std::ofstream(dir / "movies.jsonl").close();
  EXPECT_TRUE(load_dataset(dir / "movies.jsonl").empty());
}

TEST(LoadDataset, ThreeLineFixtureFieldByField) {
  const Corpus c = parse_dataset(kThreeMovies);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].id, "m1");
  EXPECT_EQ(c[1].id, "m2");
  EXPECT_EQ(c[2].id, "m3");

  EXPECT_EQ(c[0].title, "One");
  EXPECT_DOUBLE_EQ(c[0].revenue_usd, 1e6);
  ASSERT_TRUE(c[0].budget_usd.has_value());
  EXPECT_DOUBLE_EQ(*c[0].budget_usd, 2.5e5);
  EXPECT_EQ(c[0].release_date, (Date{2001, 3, 4}));
  EXPECT_EQ(c[0].release_year, 2001);
  EXPECT_EQ(c[0].release_month, 3);
  EXPECT_EQ(c[0].mpaa, "PG");
  EXPECT_EQ(c[0].keywords, (std::vector<std::string>{"heist", "space"}));
  EXPECT_EQ(c[0].directors, (std::vector<std::string>{"d1"}));
  ASSERT_EQ(c[0].actors.size(), 1u);
  EXPECT_EQ(c[0].actors[0].gender, "F");
  EXPECT_EQ(c[0].actors[0].age, 30);
  EXPECT_DOUBLE_EQ(c[0].features.target_log_revenue, 6.0);

  EXPECT_TRUE(c[1].franchise);
  EXPECT_EQ(c[1].franchise_name.value_or(""), "Saga");
  EXPECT_EQ(c[1].mpaa, "NA");
  EXPECT_FALSE(c[1].budget_usd.has_value());

  EXPECT_FALSE(c[2].budget_usd.has_value());
  EXPECT_EQ(c[2].actors.size(), kMaxActors);
  EXPECT_DOUBLE_EQ(c[2].features.target_log_revenue, 0.0);
}

TEST(LoadDataset, RoundTripsThroughJson) {
  const Corpus c = parse_dataset(kThreeMovies);
  const auto dir = fixture::scratch_dir("dataset_roundtrip");
  save_dataset(c, dir / "movies.jsonl");
  const Corpus back = load_dataset(dir / "movies.jsonl");
  ASSERT_EQ(back.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(movie_to_json(back[i]), movie_to_json(c[i]));
}

TEST(LoadDataset, MonthThirteenNamesTheField) {
  const std::string line =
      R"({"id":"x","revenue_usd":1,"release_date":"2001-03-04","release_month":13})";
  const auto msg = message_of<SchemaError>([&] { parse_dataset(line); });
  EXPECT_NE(msg.find("release_month"), std::string::npos) << msg;
}

TEST(LoadDataset, MalformedLineReportsLineNumber) {
  const std::string text = std::string(kThreeMovies) + "{not json\n";
  const auto msg = message_of<ParseError>([&] { parse_dataset(text); });
  EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
}

TEST(LoadDataset, DuplicateIdIsConflict) {
  const std::string line = R"({"id":"x","revenue_usd":1,"release_date":"2001-03-04"})";
  EXPECT_THROW(parse_dataset(line + "\n" + line), ConflictError);
}

TEST(LoadDataset, MissingMandatoryFieldsAreSchemaErrors) {
  EXPECT_THROW(parse_dataset(R"({"revenue_usd":1,"release_date":"2001-03-04"})"), SchemaError);
  EXPECT_THROW(parse_dataset(R"({"id":"x","release_date":"2001-03-04"})"), SchemaError);
  EXPECT_THROW(parse_dataset(R"({"id":"x","revenue_usd":1})"), SchemaError);
  EXPECT_THROW(parse_dataset(R"({"id":"x","revenue_usd":1,"release_date":"2001-02-30"})"), SchemaError);
}

TEST(Date, LeapDayClampsWhenAddingYears) {
  EXPECT_EQ((Date{2000, 2, 29}.plus_years(1)), (Date{2001, 2, 28}));
  EXPECT_EQ((Date{2000, 2, 29}.plus_years(4)), (Date{2004, 2, 29}));
  EXPECT_EQ((Date{1970, 1, 2}.serial()), 1);
  EXPECT_EQ((Date{2000, 3, 1}.serial() - Date{2000, 2, 28}.serial()), 2);
}

// ---------------------------------------------------------------------------

TEST(StarPower, FirstMovieIsZero) {
  Corpus c = {movie("a", "2000-01-01", 1e6)};
  c[0].directors = {"d"};
  c[0].actors = {{"x", "M", 40}};
  engineer_star_power(c);
  EXPECT_EQ(c[0].features.directors[0].experience, 0.0);
  EXPECT_EQ(c[0].features.directors[0].profitability, 0.0);
  EXPECT_EQ(c[0].features.actors[0].experience, 0.0);
  EXPECT_EQ(c[0].features.actors[0].profitability, 0.0);
}

TEST(StarPower, MeanLogRevenueOfPriorMovies) {
  Corpus c = {movie("a", "2000-01-01", 1e6), movie("b", "2001-01-01", 1e8), movie("c", "2002-01-01", 5.0)};
  for (auto& m : c) m.actors = {{"star", "F", 30}};
  engineer_star_power(c);
  EXPECT_DOUBLE_EQ(c[2].features.actors[0].experience, 2.0);
  EXPECT_DOUBLE_EQ(c[2].features.actors[0].profitability, 7.0);
  EXPECT_DOUBLE_EQ(c[1].features.actors[0].profitability, 6.0);
}

TEST(StarPower, DirectorsAndWritersShareCrewHistory) {
  Corpus c = {movie("a", "2000-01-01", 1e4), movie("b", "2001-01-01", 1e6)};
  c[0].writers = {"p"};
  c[1].directors = {"p"};
  engineer_star_power(c);
  EXPECT_DOUBLE_EQ(c[1].features.directors[0].experience, 1.0);
  EXPECT_DOUBLE_EQ(c[1].features.directors[0].profitability, 4.0);
}

TEST(StarPower, SameDayReleasesDoNotCount) {
  Corpus c = {movie("a", "2000-05-05", 1e6), movie("b", "2000-05-05", 1e8)};
  for (auto& m : c) m.directors = {"d"};
  engineer_star_power(c);
  EXPECT_EQ(c[0].features.directors[0].experience, 0.0);
  EXPECT_EQ(c[1].features.directors[0].experience, 0.0);
}

TEST(StarPower, OnlyEarlierMoviesMatter) {
  // Changing a later movie must not change an earlier one's features.
  Rng rng = substream(7, "starpower");
  Corpus c;
  for (int i = 0; i < 60; ++i) {
    const int year = 1990 + static_cast<int>(uniform_index(rng, 20));
    auto m = movie("m" + std::to_string(i), std::to_string(year) + "-06-01", std::pow(10.0, 3 + 5 * uniform_real(rng)));
    m.directors = {"d" + std::to_string(uniform_index(rng, 5))};
    m.actors = {{"a" + std::to_string(uniform_index(rng, 5)), "F", 30}};
    c.push_back(m);
  }
  Corpus base = c;
  engineer_star_power(base);
  const Date cut{2000, 1, 1};
  Corpus altered = c;
  for (auto& m : altered) {
    if (m.release_date > cut) m.revenue_usd *= 1000.0;
  }
  engineer_star_power(altered);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i].release_date > cut) continue;
    EXPECT_EQ(base[i].features.directors[0].profitability, altered[i].features.directors[0].profitability);
    EXPECT_EQ(base[i].features.actors[0].experience, altered[i].features.actors[0].experience);
  }
}

// ---------------------------------------------------------------------------

TEST(Competition, IsolatedMovie) {
  Corpus c = {movie("a", "2000-01-01", 1), movie("b", "2000-03-01", 1)};
  const std::vector<std::vector<int>> sets = {{1}, {1}};
  engineer_competition(c, sets);
  EXPECT_EQ(c[0].features.n_competitors, 0);
  EXPECT_EQ(c[0].features.competitor_similarity, 0.0);
}

TEST(Competition, OneIdenticalCompetitor) {
  Corpus c = {movie("a", "2000-01-01", 1), movie("b", "2000-01-10", 1)};
  const std::vector<std::vector<int>> sets = {{1, 2}, {1, 2}};
  engineer_competition(c, sets);
  EXPECT_EQ(c[0].features.n_competitors, 1);
  EXPECT_DOUBLE_EQ(c[0].features.competitor_similarity, 1.0);
}

TEST(Competition, TwoCompetitorsSumOverlaps) {
  Corpus c = {movie("a", "2000-01-10", 1), movie("b", "2000-01-01", 1), movie("c", "2000-01-20", 1),
              movie("d", "2000-01-11", 1, {}, {"Horror"})};
  const std::vector<std::vector<int>> sets = {{1, 2}, {2, 3}, {1, 2, 4, 5}, {1, 2}};
  engineer_competition(c, sets);
  EXPECT_EQ(c[0].features.n_competitors, 2);
  EXPECT_NEAR(c[0].features.competitor_similarity, 1.0 / 3.0 + 0.5, 1e-12);
}

TEST(Competition, IsSymmetric) {
  Rng rng = substream(3, "competition");
  Corpus c;
  std::vector<std::vector<int>> sets;
  for (int i = 0; i < 80; ++i) {
    c.push_back(movie("m" + std::to_string(i), "2000-0" + std::to_string(1 + uniform_index(rng, 3)) + "-1" +
                                                   std::to_string(uniform_index(rng, 9)),
                      1, {}, {"G" + std::to_string(uniform_index(rng, 2))}));
    sets.push_back({static_cast<int>(uniform_index(rng, 4))});
  }
  engineer_competition(c, sets);
  // Sum over movies of competitor counts is twice the number of competing pairs.
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      const auto gap = std::abs(c[i].release_date.serial() - c[j].release_date.serial());
      if (gap <= 14 && c[i].genres == c[j].genres) ++pairs;
    }
  }
  std::size_t total = 0;
  for (const auto& m : c) total += static_cast<std::size_t>(m.features.n_competitors);
  EXPECT_EQ(total, 2 * pairs);
}

// ---------------------------------------------------------------------------

TEST(Normalize, LogAndMinMaxExamples) {
  FeatureTable t;
  t.columns = {"Budget", "Age", "Flat"};
  t.rows = {{1e7, 30, 5}, {1e5, 10, 5}, {1e6, 90, 5}};
  NormalizationPolicy policy = {{"Budget", Scaling::log10}, {"Age", Scaling::minmax}, {"Flat", Scaling::minmax}};
  const std::vector<std::size_t> train = {1, 2};
  const auto out = normalize_numericals(t, policy, train);
  EXPECT_DOUBLE_EQ(out.table.rows[0][0], 7.0);
  EXPECT_DOUBLE_EQ(out.table.rows[0][1], 0.25);
  for (const auto& r : out.table.rows) EXPECT_EQ(r[2], 0.0);
  ASSERT_EQ(out.warnings.size(), 1u);
  EXPECT_NE(out.warnings[0].find("Flat"), std::string::npos);
}

TEST(Normalize, StatisticsComeFromTrainRowsOnly) {
  FeatureTable t;
  t.columns = {"X"};
  t.rows = {{0}, {10}, {1000}};
  const auto out = normalize_numericals(t, {{"X", Scaling::minmax}}, std::vector<std::size_t>{0, 1});
  EXPECT_DOUBLE_EQ(out.table.rows[2][0], 100.0);
  const auto back = Normalizer::from_json(out.normalizer.to_json());
  EXPECT_EQ(back.transform(t).rows, out.table.rows);
}

TEST(Normalize, MissingPolicyEntryIsSchemaError) {
  FeatureTable t;
  t.columns = {"X"};
  t.rows = {{1}};
  EXPECT_THROW(normalize_numericals(t, {}, std::vector<std::size_t>{0}), SchemaError);
}

// ---------------------------------------------------------------------------

namespace {

Corpus split_corpus(std::size_t n, std::size_t franchise) {
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    auto m = movie("m" + std::to_string(i), "2000-01-01", 1);
    m.franchise = i < franchise;
    c.push_back(m);
  }
  return c;
}

}  // namespace

TEST(Split, HundredWithTwentyFranchise) {
  const Corpus c = split_corpus(100, 20);
  const SplitSet s = stratified_split(c, 1);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.train.size(), 70u);
  const auto rows = split_rows(c, s);
  std::size_t franchise = 0;
  for (auto r : rows.test) franchise += c[r].franchise;
  EXPECT_NEAR(static_cast<double>(franchise), 4.0, 1.0);
}

TEST(Split, DeterministicPerSeed) {
  const Corpus c = split_corpus(57, 9);
  EXPECT_EQ(stratified_split(c, 5).to_json(), stratified_split(c, 5).to_json());
  EXPECT_NE(stratified_split(c, 5).to_json(), stratified_split(c, 6).to_json());
  EXPECT_EQ(SplitSet::from_json(stratified_split(c, 5).to_json()).to_json(), stratified_split(c, 5).to_json());
}

TEST(Split, TooSmallCorpusIsRejected) { EXPECT_THROW(stratified_split(split_corpus(5, 1), 1), DataError); }

TEST(Split, PartitionAndFranchiseRateProperty) {
  Rng rng = substream(11, "split-property");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 10 + uniform_index(rng, 300);
    const std::size_t f = uniform_index(rng, n + 1);
    const Corpus c = split_corpus(n, f);
    const SplitSet s = stratified_split(c, static_cast<std::uint64_t>(trial));
    std::set<std::string> all;
    for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
    ASSERT_EQ(all.size(), n);
    ASSERT_EQ(s.train.size() + s.val.size() + s.test.size(), n);
    EXPECT_EQ(s.test.size(), static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
    const auto rows = split_rows(c, s);
    std::size_t in_test = 0;
    for (auto r : rows.test) in_test += c[r].franchise;
    const double expected = 0.2 * static_cast<double>(f);
    EXPECT_LE(std::abs(static_cast<double>(in_test) - expected), 1.0) << "n=" << n << " f=" << f;
  }
}

TEST(Split, UnknownIdIsDataError) {
  const Corpus c = split_corpus(20, 2);
  SplitSet s = stratified_split(c, 1);
  s.test.push_back("nope");
  EXPECT_THROW(split_rows(c, s), DataError);
}

TEST(ImputeBudgets, GenreMeanFromTrainRows) {
  Corpus c = {movie("a", "2000-01-01", 1, 100.0, {"Drama"}), movie("b", "2000-01-01", 1, 300.0, {"Drama"}),
              movie("c", "2000-01-01", 1, {}, {"Drama"}), movie("d", "2000-01-01", 1, 1e6, {"Drama"}),
              movie("e", "2000-01-01", 1, {}, {"Horror"})};
  const std::vector<std::size_t> train = {0, 1, 2, 4};
  const auto warnings = impute_budgets(c, train);
  EXPECT_DOUBLE_EQ(c[2].features.budget_usd, 200.0);
  EXPECT_TRUE(c[2].features.budget_imputed);
  EXPECT_DOUBLE_EQ(c[3].features.budget_usd, 1e6);
  EXPECT_FALSE(c[3].features.budget_imputed);
  EXPECT_DOUBLE_EQ(c[4].features.budget_usd, 200.0);  // overall train mean
  EXPECT_EQ(warnings.size(), 1u);
}
