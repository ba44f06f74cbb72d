#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "boxoffice/copycat.hpp"
#include "boxoffice/dataset.hpp"
#include "boxoffice/encoder.hpp"
#include "boxoffice/keywords.hpp"
#include "boxoffice/posters.hpp"

namespace boxoffice {

/// Token strings per family, learned from the training split. Keyword tokens
/// are cluster ids.
class Vocabulary {
 public:
  int lookup(Family family, const std::string& token) const;
  int size(Family family) const { return static_cast<int>(tokens_[static_cast<std::size_t>(family)].size()); }
  const std::string& token(Family family, int id) const { return tokens_[static_cast<std::size_t>(family)].at(static_cast<std::size_t>(id)); }

  void add(Family family, const std::string& token);
  void set_keyword_clusters(std::size_t k);

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  std::array<std::vector<std::string>, kFamilyCount> tokens_;
  std::array<std::unordered_map<std::string, int>, kFamilyCount> index_;
};

/// Default scaling per numeral slot: budgets and profitabilities on log10,
/// everything else min-max.
NormalizationPolicy default_policy();

/// Raw numeral table with one column per numeral slot. Profitability columns
/// hold 10^(mean log10 revenue), so the log10 policy recovers the mean.
FeatureTable numeral_table(const Corpus& corpus, std::span<const CopycatAnnotation> copycats);

struct PreparedData {
  Corpus corpus;
  SplitSet split;
  SplitRows rows;
  std::vector<std::vector<int>> cluster_sets;
  std::size_t cluster_count = 0;
  std::vector<CopycatAnnotation> copycats;
  std::size_t blockbusters = 0;
  FeatureTable numerals;  // normalized
  Normalizer normalizer;
  Vocabulary vocabulary;
  std::vector<std::string> warnings;
};

/// Split, budget imputation, star power, keyword clusters, competition,
/// copycats, numeral normalization and vocabulary, in that order. Statistics
/// come from the training split only.
PreparedData prepare_corpus(Corpus corpus, const ClusterModel& clusters, std::uint64_t seed,
                            const NormalizationPolicy& policy = default_policy());

/// Same as above with a fixed split (used when reloading a trained model).
PreparedData prepare_corpus(Corpus corpus, const ClusterModel& clusters, const SplitSet& split,
                            const NormalizationPolicy& policy = default_policy());

/// A tokenized movie. Keyword slots in `base` are padding; batches fill them
/// from `keywords`.
struct MovieExample {
  std::string id;
  InputSequence base;
  std::vector<int> keywords;
  PosterObjectSet objects;
  double target = 0.0;
  double revenue_usd = 0.0;
};

/// Encoder configuration with vocabulary sizes filled from `vocabulary`.
EncoderConfig with_vocabulary(EncoderConfig config, const Vocabulary& vocabulary);

std::vector<MovieExample> make_examples(const PreparedData& data, const EncoderConfig& config,
                                        const PosterLibrary& posters);

/// Sequence with the first `max_keywords` keywords placed (evaluation view).
InputSequence full_sequence(const MovieExample& example, const SequenceLayout& layout);

}  // namespace boxoffice
