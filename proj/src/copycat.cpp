#include "boxoffice/copycat.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "boxoffice/error.hpp"

namespace boxoffice {

using nlohmann::json;

json CopycatAnnotation::to_json() const {
  return {{"movie_id", movie_id},
          {"is_copycat", is_copycat},
          {"similarity", similarity},
          {"rank", rank},
          {"source_blockbuster", source_blockbuster ? json(*source_blockbuster) : json(nullptr)}};
}

CopycatAnnotation CopycatAnnotation::from_json(const json& j) {
  CopycatAnnotation a;
  a.movie_id = j.at("movie_id").get<std::string>();
  a.is_copycat = j.at("is_copycat").get<bool>();
  a.similarity = j.at("similarity").get<double>();
  a.rank = j.at("rank").get<double>();
  if (j.contains("source_blockbuster") && !j.at("source_blockbuster").is_null()) {
    a.source_blockbuster = j.at("source_blockbuster").get<std::string>();
  }
  return a;
}

double effective_budget(const MovieRecord& movie) {
  if (movie.budget_usd) return *movie.budget_usd;
  return movie.features.budget_imputed ? movie.features.budget_usd : std::nan("");
}

std::vector<std::size_t> find_blockbusters(const Corpus& corpus, const BlockbusterRule& rule) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const MovieRecord& m = corpus[i];
    if (m.revenue_usd < rule.min_revenue_usd) continue;
    const double budget = effective_budget(m);
    if (std::isnan(budget)) {
      spdlog::debug("movie '{}' has no budget; not considered a blockbuster", m.id);
      continue;
    }
    if (budget <= 0.0) {
      spdlog::debug("movie '{}' has zero budget; return ratio treated as infinite", m.id);
      out.push_back(i);
      continue;
    }
    if (m.revenue_usd / budget >= rule.min_return_ratio) out.push_back(i);
  }
  return out;
}

double jaccard(std::span<const int> a, std::span<const int> b) {
  std::size_t inter = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<CopycatAnnotation> assign_copycats(const Corpus& corpus,
                                               std::span<const std::vector<int>> cluster_sets,
                                               std::span<const std::size_t> blockbusters,
                                               const CopycatRule& rule) {
  if (cluster_sets.size() != corpus.size()) throw ShapeError("assign_copycats: cluster_sets size mismatch");
  if (rule.top_n == 0) throw ConfigError("assign_copycats: top_n must be >= 1");

  std::vector<CopycatAnnotation> out(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) out[i].movie_id = corpus[i].id;

  auto earlier = [&](std::size_t x, std::size_t y) {
    const auto& a = corpus[x];
    const auto& b = corpus[y];
    return a.release_date != b.release_date ? a.release_date < b.release_date : a.id < b.id;
  };

  std::vector<std::size_t> ordered_blockbusters(blockbusters.begin(), blockbusters.end());
  std::sort(ordered_blockbusters.begin(), ordered_blockbusters.end(), earlier);

  std::vector<std::pair<double, std::size_t>> candidates;
  for (std::size_t b : ordered_blockbusters) {
    const Date start = corpus[b].release_date;
    const Date stop = start.plus_years(rule.window_years);
    candidates.clear();
    for (std::size_t m = 0; m < corpus.size(); ++m) {
      if (m == b) continue;
      const Date& d = corpus[m].release_date;
      if (!(start < d) || stop < d) continue;
      const double s = jaccard(cluster_sets[b], cluster_sets[m]);
      if (s > 0.0) candidates.emplace_back(s, m);
    }
    std::sort(candidates.begin(), candidates.end(), [&](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return earlier(x.second, y.second);
    });
    if (candidates.size() > rule.top_n) candidates.resize(rule.top_n);
    std::sort(candidates.begin(), candidates.end(),
              [&](const auto& x, const auto& y) { return earlier(x.second, y.second); });

    for (std::size_t pos = 0; pos < candidates.size(); ++pos) {
      const auto [s, m] = candidates[pos];
      CopycatAnnotation& a = out[m];
      // Blockbusters are visited chronologically, so keeping the existing
      // claim on equal similarity favours the earlier blockbuster.
      if (a.is_copycat && !(s > a.similarity)) continue;
      a.is_copycat = true;
      a.similarity = s;
      a.rank = static_cast<double>(pos + 1) / static_cast<double>(rule.top_n);
      a.source_blockbuster = corpus[b].id;
    }
  }
  return out;
}

json CopycatSummary::to_json() const {
  json j;
  j["blockbusters"] = blockbusters;
  for (int c = 0; c < 2; ++c) {
    const char* row = c ? "copycat" : "non_copycat";
    j[row]["count"] = {{"franchise", count[c][1]}, {"non_franchise", count[c][0]}};
    j[row]["mean_log10_revenue"] = {{"franchise", mean_log_revenue[c][1]},
                                    {"non_franchise", mean_log_revenue[c][0]}};
  }
  j["copycat"]["mean_similarity"] = {{"franchise", mean_similarity[1]}, {"non_franchise", mean_similarity[0]}};
  j["copycat"]["mean_rank"] = {{"franchise", mean_rank[1]}, {"non_franchise", mean_rank[0]}};
  return j;
}

std::string CopycatSummary::to_table() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %10s %14s %12s %14s\n", "", "# franchise", "# non-franchise",
                "log10 rev F", "log10 rev NF");
  out << line;
  for (int c = 1; c >= 0; --c) {
    std::snprintf(line, sizeof(line), "%-14s %10zu %14zu %12.4f %14.4f\n", c ? "Copycat" : "Non-Copycat",
                  count[c][1], count[c][0], mean_log_revenue[c][1], mean_log_revenue[c][0]);
    out << line;
  }
  std::snprintf(line, sizeof(line), "%-14s %10s %14s %12s %14s\n", "", "sim F", "sim NF", "rank F", "rank NF");
  out << line;
  std::snprintf(line, sizeof(line), "%-14s %10.4f %14.4f %12.4f %14.4f\n", "Copycat", mean_similarity[1],
                mean_similarity[0], mean_rank[1], mean_rank[0]);
  out << line;
  out << "blockbusters: " << blockbusters << '\n';
  return out.str();
}

CopycatSummary summarize_copycats(const Corpus& corpus, std::span<const CopycatAnnotation> annotations,
                                  std::size_t n_blockbusters) {
  if (annotations.size() != corpus.size()) throw ShapeError("summarize_copycats: size mismatch");
  CopycatSummary s;
  s.blockbusters = n_blockbusters;
  double sim_sum[2] = {0, 0};
  double rank_sum[2] = {0, 0};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const int c = annotations[i].is_copycat ? 1 : 0;
    const int f = corpus[i].franchise ? 1 : 0;
    ++s.count[c][f];
    s.mean_log_revenue[c][f] += log10_revenue(corpus[i].revenue_usd);
    if (c) {
      sim_sum[f] += annotations[i].similarity;
      rank_sum[f] += annotations[i].rank;
    }
  }
  for (int c = 0; c < 2; ++c) {
    for (int f = 0; f < 2; ++f) {
      if (s.count[c][f] > 0) s.mean_log_revenue[c][f] /= static_cast<double>(s.count[c][f]);
    }
  }
  for (int f = 0; f < 2; ++f) {
    if (s.count[1][f] > 0) {
      s.mean_similarity[f] = sim_sum[f] / static_cast<double>(s.count[1][f]);
      s.mean_rank[f] = rank_sum[f] / static_cast<double>(s.count[1][f]);
    }
  }
  return s;
}

void save_annotations(std::span<const CopycatAnnotation> annotations, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write annotations '" + path.string() + "'");
  for (const auto& a : annotations) out << a.to_json().dump() << '\n';
}

std::vector<CopycatAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations '" + path.string() + "'");
  std::vector<CopycatAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(CopycatAnnotation::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace boxoffice
