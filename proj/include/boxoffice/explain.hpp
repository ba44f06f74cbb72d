#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "boxoffice/encoder.hpp"
#include "boxoffice/random.hpp"

namespace boxoffice {

/// Display name for a token of a family (vocabulary lookups live in the caller).
using TokenLabel = std::function<std::string(Family, int)>;

/// Row 0 of the gated rollout: A'_l = max(G_l, 0) * A_l elementwise,
/// R_1 = A'_1, R_l = A'_l R_{l-1}. One matrix per layer, first layer first.
Eigen::VectorXd attention_rollout(std::span<const Mat> attention, std::span<const Mat> gradients);

/// Rollout for one sequence, with gradients of the Huber loss at `target`.
Eigen::VectorXd attention_rollout(const Encoder& encoder, const InputSequence& seq, double target);

struct RolloutResult {
  std::vector<Eigen::VectorXd> per_example;
  std::map<std::string, double> variables;  // mean influence per variable
  std::map<std::string, double> values;     // "Genre=Drama", "Month=12"
  std::map<std::string, double> variables_normalized;  // max scaled to 1
  std::map<std::string, double> values_normalized;

  /// Variables by normalized influence, largest first.
  std::vector<std::pair<std::string, double>> ranking() const;
  nlohmann::json to_json() const;
};

/// Averages per-slot influence over examples. Padded slots and [CLS] are
/// skipped; Genre and Month are also tracked per value.
RolloutResult aggregate_rollout(std::vector<Eigen::VectorXd> per_example, std::span<const InputSequence> sequences,
                                const SequenceLayout& layout, const TokenLabel& label = {});

// ---------------------------------------------------------------------------
// LIME

/// Category value standing for a padded (absent) slot.
inline constexpr int kAbsentCategory = -2;

struct LimeFeature {
  std::string variable;
  std::size_t slot = 0;
  Family family = Family::genre;
  bool numeral = false;
  std::vector<int> categories;  // sorted, categoricals only
  std::vector<Slot> marginal;   // training values, drawn uniformly
};

struct LimeStats {
  std::vector<LimeFeature> features;
  bool fitted = false;

  /// Every numeral slot plus single-slot categoricals with at most
  /// `max_categories` training values. Genres, names and keywords stay fixed.
  static LimeStats fit(std::span<const InputSequence> train, const SequenceLayout& layout,
                       std::size_t max_categories = 12);
};

/// `samples` copies of `seq` with every perturbable slot redrawn
/// independently from its training marginal.
std::vector<InputSequence> lime_perturb(const InputSequence& seq, const LimeStats& stats, std::size_t samples,
                                        Rng& rng);

using Predictor = std::function<std::vector<double>(std::span<const InputSequence>)>;

Predictor encoder_predictor(const Encoder& encoder, int workers = 1);

struct LimeOptions {
  std::size_t samples = 5000;
  int folds = 5;
  int lambdas = 50;
  double lambda_ratio = 1e-4;  // smallest lambda / lambda_max (extended when CV picks it)
};

struct LimeColumn {
  std::string variable;
  std::string value;  // empty for numerals
  bool numeral = false;
  double beta = 0.0;  // per unit of the model input / per switch to `value`
};

struct LimeResult {
  std::vector<LimeColumn> columns;
  std::map<std::string, std::string> original;  // categorical variable -> label of the example's value
  double intercept = 0.0;
  double r2 = 0.0;
  double lambda = 0.0;
  std::size_t samples = 0;

  nlohmann::json to_json() const;
};

/// Lasso surrogate on the perturbed neighbourhood. Categoricals are one-hot
/// over their training values with the example's own value as the reference
/// level; numerals are standardized for the fit and reported per input unit.
LimeResult lime_explain(const Predictor& predict, const InputSequence& seq, const LimeStats& stats,
                        const LimeOptions& options, Rng& rng, const TokenLabel& label = {});

struct LassoFit {
  Eigen::VectorXd beta;  // original column units
  double intercept = 0.0;
  double lambda = 0.0;
};

/// min (1/2N)|y - b - X beta|^2 + lambda |beta_std|_1 over a log-spaced lambda
/// path, picked by k-fold cross-validation. When the smallest lambda wins, the
/// path is continued downward (at most to 1e-8 lambda_max). Constant columns
/// get zero.
LassoFit lasso_cv(const Mat& x, const Eigen::VectorXd& y, int folds, int lambdas, double lambda_ratio, Rng& rng);

struct LimeSummary {
  std::map<std::string, double> importance;  // mean |beta| per variable
  std::map<std::string, std::vector<double>> numeral;
  /// Contrast of the example's own value against the alternatives, grouped by that value.
  std::map<std::string, std::vector<double>> original_value;
  /// Effect of switching into a value, from examples holding another value.
  std::map<std::string, std::vector<double>> perturbed_value;

  std::vector<std::pair<std::string, double>> ranking() const;
  nlohmann::json to_json() const;
};

LimeSummary summarize_lime(std::span<const LimeResult> results);

/// Rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

/// (Q3 + Q1 - 2 Q2) / (Q3 - Q1) with interpolated quartiles; 0 when Q3 == Q1.
double bowley_skewness(std::vector<double> values);

/// Spearman over the variables present in both rankings.
double ranking_agreement(std::span<const std::pair<std::string, double>> a,
                         std::span<const std::pair<std::string, double>> b, std::size_t* shared = nullptr);

}  // namespace boxoffice
