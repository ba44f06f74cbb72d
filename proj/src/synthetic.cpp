#include "boxoffice/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "boxoffice/error.hpp"
#include "boxoffice/random.hpp"

namespace boxoffice {

namespace {

constexpr std::array<const char*, 10> kGenreNames = {"Action", "Comedy",    "Drama",   "Horror",  "Animation",
                                                     "Thriller", "Romance", "Fantasy", "Mystery", "Western"};

std::string keyword_name(std::size_t cluster, std::size_t j) {
  return "kw" + std::to_string(cluster) + "_" + std::to_string(j);
}

template <typename T>
const T& pick(const std::vector<T>& pool, Rng& rng) {
  return pool[uniform_index(rng, pool.size())];
}

std::vector<std::string> name_pool(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + " " + std::to_string(i));
  return out;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& o) {
  if (o.genres < 1 || o.genres > kGenreNames.size()) throw ConfigError("synthetic: genres must be in [1, 10]");
  if (o.themes < 1 || o.clusters_per_theme < 1 || o.keywords_per_cluster < 1) {
    throw ConfigError("synthetic: themes, clusters and keywords must be >= 1");
  }
  if (o.min_keywords < 1 || o.max_keywords < o.min_keywords) throw ConfigError("synthetic: need 1 <= min_keywords <= max_keywords");
  SyntheticCorpus out;
  Rng rng = substream(o.seed, "synthetic");
  const std::size_t n_clusters = o.themes * o.clusters_per_theme;

  // Keyword geometry: lexical vectors scatter tightly around a cluster centre.
  out.lexical.dim = o.lexical_dim;
  out.true_clusters.k = n_clusters;
  for (std::size_t c = 0; c < n_clusters; ++c) {
    std::vector<double> centre(o.lexical_dim);
    for (auto& v : centre) v = standard_normal(rng);
    for (std::size_t j = 0; j < o.keywords_per_cluster; ++j) {
      std::vector<double> vec = centre;
      for (auto& v : vec) v += 0.05 * standard_normal(rng);
      out.lexical.vectors.emplace(keyword_name(c, j), std::move(vec));
      out.true_clusters.assignment.emplace(keyword_name(c, j), static_cast<int>(c));
    }
  }
  for (const auto& [kw, id] : out.true_clusters.assignment) out.true_clusters.vocabulary.push_back(kw);

  // Object prototypes: clusters of one theme share a visual centre.
  Eigen::MatrixXd theme_objects(static_cast<Eigen::Index>(o.themes), static_cast<Eigen::Index>(o.object_width));
  for (Eigen::Index i = 0; i < theme_objects.size(); ++i) theme_objects.data()[i] = standard_normal(rng);
  out.cluster_objects.resize(static_cast<Eigen::Index>(n_clusters), static_cast<Eigen::Index>(o.object_width));
  for (std::size_t c = 0; c < n_clusters; ++c) {
    for (std::size_t f = 0; f < o.object_width; ++f) {
      out.cluster_objects(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(f)) =
          theme_objects(static_cast<Eigen::Index>(c / o.clusters_per_theme), static_cast<Eigen::Index>(f)) +
          o.cluster_object_spread * standard_normal(rng);
    }
  }

  std::vector<double> genre_offset(o.genres);
  for (std::size_t g = 0; g < o.genres; ++g) {
    genre_offset[g] = o.genres == 1 ? 0.0 : o.genre_offset_scale * (2.0 * static_cast<double>(g) / static_cast<double>(o.genres - 1) - 1.0);
  }
  std::vector<double> theme_value(o.themes);
  for (std::size_t t = 0; t < o.themes; ++t) {
    theme_value[t] = o.themes == 1 ? 0.0 : o.theme_value_scale * (2.0 * static_cast<double>(t) / static_cast<double>(o.themes - 1) - 1.0);
  }

  const auto producers = name_pool("Producer", 8);
  const auto distributors = name_pool("Distributor", 6);
  const auto directors = name_pool("Director", 40);
  const auto writers = name_pool("Writer", 50);
  const auto actors = name_pool("Actor", 80);
  const auto franchises = name_pool("Saga", 10);
  const std::vector<std::string> genders = {"female", "male", "nonbinary"};

  for (std::size_t i = 0; i < o.movies; ++i) {
    MovieRecord m;
    char id[16];
    std::snprintf(id, sizeof(id), "m%05zu", i);
    m.id = id;
    m.title = "Synthetic Movie " + std::to_string(i);
    m.release_year = 2000 + static_cast<int>(uniform_index(rng, 20));
    m.release_month = 1 + static_cast<int>(uniform_index(rng, 12));
    m.release_date = Date{m.release_year, m.release_month, 1 + static_cast<int>(uniform_index(rng, 28))};

    const std::size_t primary = uniform_index(rng, o.genres);
    m.genres.push_back(kGenreNames[primary]);
    if (o.genres > 1 && uniform_real(rng) < 0.4) {
      std::size_t second = uniform_index(rng, o.genres - 1);
      if (second >= primary) ++second;
      m.genres.push_back(kGenreNames[second]);
    }
    m.mpaa = std::string(kMpaaRatings[uniform_index(rng, 4)]);
    m.franchise = uniform_real(rng) < 0.2;
    if (m.franchise) m.franchise_name = pick(franchises, rng);
    m.producer = pick(producers, rng);
    m.distributor = pick(distributors, rng);
    m.directors.push_back(pick(directors, rng));
    if (uniform_real(rng) < 0.2) {
      const auto& d = pick(directors, rng);
      if (d != m.directors[0]) m.directors.push_back(d);
    }
    m.writers.push_back(pick(writers, rng));
    if (uniform_real(rng) < 0.5) {
      const auto& w = pick(writers, rng);
      if (w != m.writers[0]) m.writers.push_back(w);
    }
    const std::size_t n_actors = 2 + uniform_index(rng, 2);
    for (std::size_t a = 0; a < n_actors; ++a) {
      Actor actor{pick(actors, rng), pick(genders, rng), 20 + static_cast<int>(uniform_index(rng, 50))};
      const bool duplicate = std::any_of(m.actors.begin(), m.actors.end(), [&](const Actor& x) { return x.name == actor.name; });
      if (!duplicate) m.actors.push_back(actor);
    }

    const std::size_t theme = uniform_index(rng, o.themes);
    out.theme_of_movie.push_back(theme);
    const std::size_t n_keywords = o.min_keywords + uniform_index(rng, o.max_keywords - o.min_keywords + 1);
    std::set<std::string> keywords;
    std::set<std::size_t> clusters;
    for (std::size_t k = 0; k < n_keywords; ++k) {
      const std::size_t cluster = uniform_real(rng) < o.on_theme_rate
                                      ? theme * o.clusters_per_theme + uniform_index(rng, o.clusters_per_theme)
                                      : uniform_index(rng, n_clusters);
      keywords.insert(keyword_name(cluster, uniform_index(rng, o.keywords_per_cluster)));
      clusters.insert(cluster);
    }
    m.keywords.assign(keywords.begin(), keywords.end());

    const double log_budget = 6.0 + 2.5 * uniform_real(rng);
    const double budget = std::pow(10.0, log_budget);
    if (uniform_real(rng) >= o.missing_budget_rate) m.budget_usd = budget;
    double y = o.intercept + o.budget_slope * log_budget;
    if (o.target == SyntheticTarget::affine_budget_genre) {
      y += genre_offset[primary];
    } else {
      y += theme_value[theme];
    }
    y += o.target_noise * standard_normal(rng);
    m.revenue_usd = std::pow(10.0, y);
    m.features.target_log_revenue = log10_revenue(m.revenue_usd);

    if (uniform_real(rng) < o.poster_rate) {
      PosterObjectSet set;
      set.movie_id = m.id;
      set.width = o.object_width;
      for (std::size_t c : clusters) {
        for (std::size_t f = 0; f < o.object_width; ++f) {
          set.values.push_back(static_cast<float>(out.cluster_objects(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(f)) +
                                                  o.object_noise * standard_normal(rng)));
        }
      }
      for (std::size_t d = 0; d < o.distractor_objects; ++d) {
        for (std::size_t f = 0; f < o.object_width; ++f) set.values.push_back(static_cast<float>(standard_normal(rng)));
      }
      m.poster_ref = m.id + ".f32";
      out.posters.push_back(std::move(set));
    }
    out.corpus.push_back(std::move(m));
  }
  return out;
}

PosterLibrary to_library(const std::vector<PosterObjectSet>& sets) {
  PosterLibrary lib;
  for (const auto& s : sets) lib.emplace(s.movie_id, s);
  return lib;
}

void write_synthetic_corpus(const SyntheticCorpus& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(data.corpus, dir / "movies.jsonl");
  std::ofstream lex(dir / "lexical.txt");
  if (!lex) throw IoError("cannot write '" + (dir / "lexical.txt").string() + "'");
  lex.precision(10);
  lex << data.lexical.vectors.size() << ' ' << data.lexical.dim << '\n';
  std::vector<std::string> words;
  for (const auto& [w, v] : data.lexical.vectors) words.push_back(w);
  std::sort(words.begin(), words.end());
  for (const auto& w : words) {
    lex << w;
    for (double v : data.lexical.vectors.at(w)) lex << ' ' << v;
    lex << '\n';
  }
  save_poster_features(dir / "posters", dir / "posters" / "manifest.jsonl", data.posters);
}

}  // namespace boxoffice
