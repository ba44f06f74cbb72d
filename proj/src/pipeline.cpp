#include "boxoffice/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "boxoffice/error.hpp"

namespace boxoffice {

using nlohmann::json;

int Vocabulary::lookup(Family family, const std::string& token) const {
  const auto& index = index_[static_cast<std::size_t>(family)];
  const auto it = index.find(token);
  return it == index.end() ? kUnknownToken : it->second;
}

void Vocabulary::add(Family family, const std::string& token) {
  const auto f = static_cast<std::size_t>(family);
  if (index_[f].contains(token)) return;
  index_[f].emplace(token, static_cast<int>(tokens_[f].size()));
  tokens_[f].push_back(token);
}

void Vocabulary::set_keyword_clusters(std::size_t k) {
  const auto f = static_cast<std::size_t>(Family::keyword);
  tokens_[f].clear();
  index_[f].clear();
  for (std::size_t c = 0; c < k; ++c) add(Family::keyword, std::to_string(c));
}

json Vocabulary::to_json() const {
  json j = json::object();
  for (std::size_t f = 0; f < kFamilyCount; ++f) j[std::string(family_name(static_cast<Family>(f)))] = tokens_[f];
  return j;
}

Vocabulary Vocabulary::from_json(const json& j) {
  Vocabulary v;
  for (const auto& [name, tokens] : j.items()) {
    const Family f = family_from_name(name);
    for (const auto& t : tokens) v.add(f, t.get<std::string>());
  }
  return v;
}

NormalizationPolicy default_policy() {
  NormalizationPolicy p;
  for (std::string_view name : kNumeralFields) {
    const bool log_scaled = name == "Budget" || name.ends_with("_prof");
    p.emplace(std::string(name), log_scaled ? Scaling::log10 : Scaling::minmax);
  }
  return p;
}

FeatureTable numeral_table(const Corpus& corpus, std::span<const CopycatAnnotation> copycats) {
  if (copycats.size() != corpus.size()) throw ShapeError("numeral_table: annotation count mismatch");
  FeatureTable t;
  for (std::string_view name : kNumeralFields) t.columns.emplace_back(name);
  t.rows.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const EngineeredFeatures& f = corpus[i].features;
    std::vector<double> row;
    row.reserve(kNumeralCount);
    row.push_back(f.budget_usd);
    auto person = [&](const std::vector<PersonPower>& people, std::size_t k) {
      const PersonPower p = k < people.size() ? people[k] : PersonPower{};
      row.push_back(p.experience);
      row.push_back(std::pow(10.0, p.profitability));
    };
    person(f.directors, 0);
    person(f.directors, 1);
    person(f.writers, 0);
    person(f.writers, 1);
    person(f.actors, 0);
    person(f.actors, 1);
    person(f.actors, 2);
    row.push_back(f.n_competitors);
    row.push_back(f.competitor_similarity);
    row.push_back(copycats[i].similarity);
    row.push_back(copycats[i].rank);
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace {

std::string flag(bool b) { return b ? "yes" : "no"; }

template <typename Fn>
void for_each_token(const MovieRecord& m, const CopycatAnnotation& c, Fn&& fn) {
  for (const auto& g : m.genres) fn(Family::genre, g);
  fn(Family::mpaa, m.mpaa);
  fn(Family::franchise, flag(m.franchise));
  if (m.franchise_name) fn(Family::franchise_name, *m.franchise_name);
  fn(Family::copycat, flag(c.is_copycat));
  if (!m.producer.empty()) fn(Family::producer, m.producer);
  if (!m.distributor.empty()) fn(Family::distributor, m.distributor);
  fn(Family::year, std::to_string(m.release_year));
  fn(Family::month, std::to_string(m.release_month));
  for (const auto& d : m.directors) fn(Family::crew, d);
  for (const auto& w : m.writers) fn(Family::crew, w);
  for (const auto& a : m.actors) {
    fn(Family::actor, a.name);
    if (!a.gender.empty()) fn(Family::gender, a.gender);
    if (a.age > 0) fn(Family::age, std::to_string(a.age));
  }
}

PreparedData prepare_with_split(Corpus corpus, const ClusterModel& clusters, SplitSet split,
                                const NormalizationPolicy& policy) {
  PreparedData d;
  d.corpus = std::move(corpus);
  d.split = std::move(split);
  d.rows = split_rows(d.corpus, d.split);

  auto w = impute_budgets(d.corpus, d.rows.train);
  d.warnings.insert(d.warnings.end(), w.begin(), w.end());
  engineer_star_power(d.corpus);
  d.cluster_sets = map_movie_keywords(d.corpus, clusters);
  d.cluster_count = clusters.k;
  engineer_competition(d.corpus, d.cluster_sets);

  const auto blockbusters = find_blockbusters(d.corpus);
  d.blockbusters = blockbusters.size();
  d.copycats = assign_copycats(d.corpus, d.cluster_sets, blockbusters);

  const FeatureTable raw = numeral_table(d.corpus, d.copycats);
  NormalizedTable norm = normalize_numericals(raw, policy, d.rows.train);
  d.numerals = std::move(norm.table);
  d.normalizer = std::move(norm.normalizer);
  d.warnings.insert(d.warnings.end(), norm.warnings.begin(), norm.warnings.end());

  std::array<std::set<std::string>, kFamilyCount> seen;
  for (std::size_t r : d.rows.train) {
    for_each_token(d.corpus[r], d.copycats[r],
                   [&](Family f, const std::string& t) { seen[static_cast<std::size_t>(f)].insert(t); });
  }
  for (std::size_t f = 0; f < kFamilyCount; ++f) {
    if (static_cast<Family>(f) == Family::keyword) continue;
    for (const auto& t : seen[f]) d.vocabulary.add(static_cast<Family>(f), t);
  }
  d.vocabulary.set_keyword_clusters(clusters.k);
  return d;
}

}  // namespace

PreparedData prepare_corpus(Corpus corpus, const ClusterModel& clusters, std::uint64_t seed,
                            const NormalizationPolicy& policy) {
  SplitSet split = stratified_split(corpus, seed);
  return prepare_with_split(std::move(corpus), clusters, std::move(split), policy);
}

PreparedData prepare_corpus(Corpus corpus, const ClusterModel& clusters, const SplitSet& split,
                            const NormalizationPolicy& policy) {
  return prepare_with_split(std::move(corpus), clusters, split, policy);
}

EncoderConfig with_vocabulary(EncoderConfig config, const Vocabulary& vocabulary) {
  for (std::size_t f = 0; f < kFamilyCount; ++f) config.vocab[f] = vocabulary.size(static_cast<Family>(f));
  return config;
}

std::vector<MovieExample> make_examples(const PreparedData& data, const EncoderConfig& config,
                                        const PosterLibrary& posters) {
  const SequenceLayout layout(config);
  const Vocabulary& vocab = data.vocabulary;
  std::vector<MovieExample> out;
  out.reserve(data.corpus.size());
  std::size_t width = 0;

  for (std::size_t r = 0; r < data.corpus.size(); ++r) {
    const MovieRecord& m = data.corpus[r];
    MovieExample ex;
    ex.id = m.id;
    ex.target = m.features.target_log_revenue;
    ex.revenue_usd = m.revenue_usd;
    ex.keywords = data.cluster_sets[r];
    ex.objects = objects_for(posters, m.id);
    if (ex.objects.count() > 0) {
      if (width != 0 && ex.objects.width != width) throw DataError("poster object widths differ across movies");
      width = ex.objects.width;
      if (static_cast<int>(width) != config.object_width) {
        throw ShapeError("poster width " + std::to_string(width) + " != configured object_width " +
                         std::to_string(config.object_width));
      }
    }

    auto& slots = ex.base.slots;
    slots.assign(layout.size(), Slot{0, 0.0, true});
    slots[0].pad = false;
    auto put = [&](std::size_t slot, Family f, const std::string& token) {
      slots[slot] = Slot{vocab.lookup(f, token), 0.0, false};
    };
    for (std::size_t g = 0; g < m.genres.size() && g < static_cast<std::size_t>(config.max_genres); ++g) {
      put(layout.genre_begin() + g, Family::genre, m.genres[g]);
    }
    put(layout.index_of("mpaa"), Family::mpaa, m.mpaa);
    put(layout.index_of("franchise"), Family::franchise, flag(m.franchise));
    if (m.franchise_name) put(layout.index_of("franchise_name"), Family::franchise_name, *m.franchise_name);
    put(layout.index_of("copycat"), Family::copycat, flag(data.copycats[r].is_copycat));
    if (!m.producer.empty()) put(layout.index_of("producer"), Family::producer, m.producer);
    if (!m.distributor.empty()) put(layout.index_of("distributor"), Family::distributor, m.distributor);
    put(layout.index_of("year"), Family::year, std::to_string(m.release_year));
    put(layout.index_of("month"), Family::month, std::to_string(m.release_month));
    for (std::size_t k = 0; k < m.directors.size(); ++k) {
      put(layout.index_of("director_" + std::to_string(k + 1)), Family::crew, m.directors[k]);
    }
    for (std::size_t k = 0; k < m.writers.size(); ++k) {
      put(layout.index_of("writer_" + std::to_string(k + 1)), Family::crew, m.writers[k]);
    }
    for (std::size_t k = 0; k < m.actors.size(); ++k) {
      const std::string n = std::to_string(k + 1);
      const Actor& a = m.actors[k];
      put(layout.index_of("actor_" + n), Family::actor, a.name);
      if (!a.gender.empty()) put(layout.index_of("actor_" + n + "_gender"), Family::gender, a.gender);
      if (a.age > 0) put(layout.index_of("actor_" + n + "_age"), Family::age, std::to_string(a.age));
    }
    for (std::size_t c = 0; c < kNumeralCount; ++c) {
      slots[layout.numeral_begin() + c] = Slot{0, data.numerals.rows[r][c], false};
    }
    out.push_back(std::move(ex));
  }
  return out;
}

InputSequence full_sequence(const MovieExample& example, const SequenceLayout& layout) {
  InputSequence seq = example.base;
  const std::size_t capacity = layout.numeral_begin() - layout.keyword_begin();
  for (std::size_t k = 0; k < example.keywords.size() && k < capacity; ++k) {
    seq.slots[layout.keyword_begin() + k] = Slot{example.keywords[k], 0.0, false};
  }
  return seq;
}

}  // namespace boxoffice
