#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "boxoffice/dataset.hpp"
#include "boxoffice/keywords.hpp"
#include "boxoffice/posters.hpp"

namespace boxoffice {

/// How log10 revenue is generated for a synthetic corpus.
enum class SyntheticTarget {
  /// slope * log10(budget) + intercept + offset of the primary genre.
  affine_budget_genre,
  /// Budget term plus a value attached to the movie's keyword theme.
  keyword_theme,
};

struct SyntheticOptions {
  std::size_t movies = 500;
  std::uint64_t seed = 1;
  SyntheticTarget target = SyntheticTarget::affine_budget_genre;
  std::size_t genres = 6;
  std::size_t themes = 8;
  std::size_t clusters_per_theme = 3;
  std::size_t keywords_per_cluster = 4;
  std::size_t min_keywords = 3;
  std::size_t max_keywords = 8;
  double on_theme_rate = 0.85;  // share of keywords drawn from the movie's theme
  std::size_t lexical_dim = 16;
  std::size_t object_width = 16;
  double object_noise = 0.3;
  double cluster_object_spread = 0.5;
  std::size_t distractor_objects = 1;  // pure-noise objects per poster
  double poster_rate = 0.9;
  double missing_budget_rate = 0.0;
  double budget_slope = 1.0;
  double intercept = 0.5;
  double genre_offset_scale = 0.5;
  double theme_value_scale = 0.8;
  double target_noise = 0.0;
};

struct SyntheticCorpus {
  Corpus corpus;
  LexicalTable lexical;
  std::vector<PosterObjectSet> posters;
  /// Keyword clusters exactly as generated (one per keyword group).
  ClusterModel true_clusters;
  std::vector<std::size_t> theme_of_movie;
  Eigen::MatrixXd cluster_objects;  // cluster x object_width prototypes
};

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options);

PosterLibrary to_library(const std::vector<PosterObjectSet>& sets);

/// Writes movies.jsonl, lexical.txt, posters/manifest.jsonl and payloads.
void write_synthetic_corpus(const SyntheticCorpus& data, const std::filesystem::path& dir);

}  // namespace boxoffice
