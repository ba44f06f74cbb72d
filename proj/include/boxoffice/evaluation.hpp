#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxoffice/encoder.hpp"
#include "boxoffice/pipeline.hpp"
#include "boxoffice/training.hpp"

namespace boxoffice {

/// Mean Huber loss on the log10 scale.
double evaluate_huber(std::span<const double> predictions, std::span<const double> targets);

struct MapeBucket {
  std::string label;
  double lower = 0.0;  // inclusive, USD
  double upper = 0.0;  // exclusive, USD (infinity for the last bucket)
  std::size_t count = 0;
  std::optional<double> mape;  // empty when the bucket has no movies
};

struct MapeReport {
  std::array<MapeBucket, 4> buckets;
  std::size_t excluded_zero = 0;  // movies with zero revenue

  nlohmann::json to_json() const;
};

inline constexpr std::array<double, 3> kMapeEdges = {1e6, 1e8, 1e9};

/// Predictions are de-logged (10^y_hat); MAPE = mean |y_hat_usd - y| / y per
/// revenue bucket [0, 1M), [1M, 100M), [100M, 1B), [1B, inf).
MapeReport mape_buckets(std::span<const double> predictions_log10, std::span<const double> targets_usd);

/// (loss - baseline) / baseline.
double percent_change(double loss, double baseline);

struct MetricsReport {
  std::size_t test_size = 0;
  double test_huber = 0.0;
  MapeReport mape;
  std::optional<double> baseline_huber;

  std::optional<double> relative_change() const;
  nlohmann::json to_json() const;
  std::string to_table() const;
};

MetricsReport make_report(std::span<const double> predictions_log10, std::span<const double> targets_log10,
                          std::span<const double> revenue_usd, std::optional<double> baseline_huber = {});

// ---------------------------------------------------------------------------
// Sample-size ablation

struct AblationArm {
  std::string name;
  std::optional<TrainConfig> pretrain;  // absent: finetune straight from initialization
  TrainConfig finetune;
};

struct AblationRun {
  std::string arm;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  double test_huber = 0.0;
};

struct AblationCell {
  std::string arm;
  std::size_t size = 0;
  std::size_t trials = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one trial
};

struct AblationTable {
  std::vector<AblationRun> runs;

  std::vector<AblationCell> cells() const;
  std::string to_csv() const;  // config,size,seed,loss
  nlohmann::json to_json() const;
};

/// For every arm, training size and seed: a fresh encoder trained on a seeded
/// subsample of the training rows (the same subsample for every arm), scored
/// on the full test split.
AblationTable ablation_curves(std::span<const MovieExample> examples, const SplitRows& rows,
                              const EncoderConfig& config, std::span<const AblationArm> arms,
                              std::span<const std::size_t> sizes, std::span<const std::uint64_t> seeds);

// ---------------------------------------------------------------------------
// Poster retrieval

struct RetrievalHit {
  std::string movie_id;
  double score = 0.0;
};

/// Final-layer output of a keyword-cluster token placed alone after [CLS].
RowVec keyword_embedding(const Encoder& encoder, int keyword_token);

/// Movies with posters ranked by similarity between the keyword embedding and
/// their projected objects (first max_objects); ties by id.
std::vector<RetrievalHit> retrieve_posters(const Encoder& encoder, int keyword_token,
                                           std::span<const MovieExample> examples, std::size_t k);

Mat object_matrix(const PosterObjectSet& objects, std::size_t limit);

}  // namespace boxoffice
