#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxoffice/dataset.hpp"

namespace boxoffice {

struct BlockbusterRule {
  double min_revenue_usd = 1e7;
  double min_return_ratio = 3.0;
};

struct CopycatRule {
  int window_years = 10;
  std::size_t top_n = 10;
};

struct CopycatAnnotation {
  std::string movie_id;
  bool is_copycat = false;
  double similarity = 0.0;
  double rank = 0.0;
  std::optional<std::string> source_blockbuster;

  nlohmann::json to_json() const;
  static CopycatAnnotation from_json(const nlohmann::json& j);
};

/// Budget used for the return ratio: the recorded one, else the imputed one.
double effective_budget(const MovieRecord& movie);

/// Row indices of blockbusters (revenue >= threshold and revenue/budget >=
/// ratio; a zero budget counts as an infinite ratio).
std::vector<std::size_t> find_blockbusters(const Corpus& corpus, const BlockbusterRule& rule = {});

/// |A ∩ B| / |A ∪ B| over sorted, deduplicated id sets; J(∅, ∅) = 0.
double jaccard(std::span<const int> a, std::span<const int> b);

/// One annotation per corpus row. For each blockbuster the top_n most similar
/// later movies (within the window, similarity > 0) become its copycats, ranked
/// chronologically as (position + 1) / top_n. A movie claimed by several
/// blockbusters keeps the most similar claim (ties: earlier blockbuster).
std::vector<CopycatAnnotation> assign_copycats(const Corpus& corpus,
                                               std::span<const std::vector<int>> cluster_sets,
                                               std::span<const std::size_t> blockbusters,
                                               const CopycatRule& rule = {});

struct CopycatSummary {
  // [copycat][franchise]
  std::size_t count[2][2] = {{0, 0}, {0, 0}};
  double mean_log_revenue[2][2] = {{0, 0}, {0, 0}};
  double mean_similarity[2] = {0, 0};  // copycats only, by franchise
  double mean_rank[2] = {0, 0};
  std::size_t blockbusters = 0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

CopycatSummary summarize_copycats(const Corpus& corpus, std::span<const CopycatAnnotation> annotations,
                                  std::size_t n_blockbusters);

void save_annotations(std::span<const CopycatAnnotation> annotations, const std::filesystem::path& path);
std::vector<CopycatAnnotation> load_annotations(const std::filesystem::path& path);

}  // namespace boxoffice
