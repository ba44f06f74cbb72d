#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace boxoffice {

/// Calendar date with a day-number view for window arithmetic.
struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  /// Days since 1970-01-01 (proleptic Gregorian).
  std::int64_t serial() const;
  std::string iso() const;
  /// Same day-of-month `years` later; Feb 29 clamps to Feb 28.
  Date plus_years(int years) const;

  static std::optional<Date> parse(std::string_view iso);

  friend auto operator<=>(const Date&, const Date&) = default;
};

struct Actor {
  std::string name;
  std::string gender;
  int age = 0;
};

struct PersonPower {
  double experience = 0.0;
  /// Mean log10 revenue of the person's earlier movies; 0 when there are none.
  double profitability = 0.0;
};

struct EngineeredFeatures {
  std::vector<PersonPower> directors;
  std::vector<PersonPower> writers;
  std::vector<PersonPower> actors;
  int n_competitors = 0;
  double competitor_similarity = 0.0;
  /// Budget actually used downstream: the recorded one, or the imputed mean.
  double budget_usd = 0.0;
  bool budget_imputed = false;
  double budget_log10 = 0.0;
  double target_log_revenue = 0.0;
};

inline constexpr std::array<std::string_view, 7> kMpaaRatings = {"G",  "PG",       "PG-13", "R",
                                                                 "NC17", "NotRated", "NA"};
inline constexpr std::size_t kMaxDirectors = 2;
inline constexpr std::size_t kMaxWriters = 2;
inline constexpr std::size_t kMaxActors = 3;

struct MovieRecord {
  std::string id;
  std::string title;
  double revenue_usd = 0.0;
  std::optional<double> budget_usd;
  int release_year = 1970;
  int release_month = 1;
  Date release_date;
  std::vector<std::string> genres;  // first entry is the primary genre
  std::string mpaa = "NA";
  std::vector<std::string> keywords;
  bool franchise = false;
  std::optional<std::string> franchise_name;
  std::string producer;
  std::string distributor;
  std::vector<std::string> directors;
  std::vector<std::string> writers;
  std::vector<Actor> actors;
  std::optional<std::string> poster_ref;

  EngineeredFeatures features;
};

using Corpus = std::vector<MovieRecord>;

/// log10 of revenue with sub-dollar values clamped to $1.
double log10_revenue(double revenue_usd);

MovieRecord movie_from_json(const nlohmann::json& object);
nlohmann::json movie_to_json(const MovieRecord& movie);

/// Reads a JSON Lines corpus. Keywords are lowercased and deduplicated, cast
/// lists are truncated to their billing limits, and `features.target_log_revenue`
/// is filled. Throws ParseError (with line number), SchemaError or ConflictError.
Corpus load_dataset(const std::filesystem::path& path);
Corpus parse_dataset(std::string_view jsonl);
void save_dataset(const Corpus& corpus, const std::filesystem::path& path);

/// Experience and profitability for every listed director, writer and actor.
/// Only movies released strictly before the current one count. Directors and
/// writers share one history (crew); actors have their own.
void engineer_star_power(Corpus& corpus);

/// Competitors are other movies sharing a genre and released within
/// `window_days` either side. `cluster_sets[i]` is the sorted keyword-cluster
/// set of corpus[i].
void engineer_competition(Corpus& corpus, std::span<const std::vector<int>> cluster_sets,
                          int window_days = 14);

/// Fills `features.budget_usd`/`budget_log10`: recorded budgets are kept,
/// missing ones get the mean train budget of the movie's primary genre (falling
/// back to the overall train mean). Returns warnings for fallbacks.
std::vector<std::string> impute_budgets(Corpus& corpus, std::span<const std::size_t> train_rows);

// ---------------------------------------------------------------------------
// Numeral table and normalization

enum class Scaling { log10, minmax };

using NormalizationPolicy = std::map<std::string, Scaling>;

struct FeatureTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;  // rows[movie][column]

  std::size_t column_index(std::string_view name) const;
};

struct ColumnScaler {
  std::string name;
  Scaling scaling = Scaling::minmax;
  double min = 0.0;
  double max = 0.0;
  bool degenerate = false;

  double apply(double raw) const;
};

struct Normalizer {
  std::vector<ColumnScaler> scalers;

  /// Statistics come from `train_rows` only. Degenerate min-max ranges map to
  /// zero and produce a warning.
  static Normalizer fit(const FeatureTable& table, const NormalizationPolicy& policy,
                        std::span<const std::size_t> train_rows,
                        std::vector<std::string>* warnings = nullptr);
  FeatureTable transform(const FeatureTable& table) const;

  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);
};

struct NormalizedTable {
  FeatureTable table;
  Normalizer normalizer;
  std::vector<std::string> warnings;
};

NormalizedTable normalize_numericals(const FeatureTable& raw, const NormalizationPolicy& policy,
                                     std::span<const std::size_t> train_rows);

Scaling parse_scaling(std::string_view name);
NormalizationPolicy load_policy(const std::filesystem::path& path);
NormalizationPolicy policy_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Splits

struct SplitSet {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  nlohmann::json to_json() const;
  static SplitSet from_json(const nlohmann::json& j);
};

struct SplitRows {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

inline constexpr double kTrainRatio = 0.70;
inline constexpr double kValRatio = 0.10;
inline constexpr double kTestRatio = 0.20;

/// 70/10/20 split stratified on the franchise flag; deterministic for a seed.
SplitSet stratified_split(const Corpus& corpus, std::uint64_t seed);

/// Maps split ids back to corpus row indices (throws DataError on unknown ids).
SplitRows split_rows(const Corpus& corpus, const SplitSet& split);

}  // namespace boxoffice
