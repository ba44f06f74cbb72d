#include "boxoffice/keywords.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "boxoffice/error.hpp"

namespace boxoffice {

using nlohmann::json;

std::size_t TfIdf::row_of(const std::string& keyword) const {
  const auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), keyword);
  if (it == vocabulary.end() || *it != keyword) throw VocabularyError("unknown keyword '" + keyword + "'");
  return static_cast<std::size_t>(it - vocabulary.begin());
}

TfIdf build_tfidf(const Corpus& corpus) {
  TfIdf out;
  std::set<std::string> vocab;
  for (const auto& m : corpus) vocab.insert(m.keywords.begin(), m.keywords.end());
  out.vocabulary.assign(vocab.begin(), vocab.end());

  const auto n_movies = static_cast<Eigen::Index>(corpus.size());
  const auto n_words = static_cast<Eigen::Index>(out.vocabulary.size());
  std::vector<int> df(out.vocabulary.size(), 0);
  std::vector<std::map<std::size_t, int>> tf(corpus.size());
  for (std::size_t m = 0; m < corpus.size(); ++m) {
    for (const auto& kw : corpus[m].keywords) ++tf[m][out.row_of(kw)];
    for (const auto& [w, count] : tf[m]) ++df[w];
  }

  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t m = 0; m < corpus.size(); ++m) {
    for (const auto& [w, count] : tf[m]) {
      const double idf = std::log(static_cast<double>(n_movies) / df[w]);
      triplets.emplace_back(static_cast<int>(w), static_cast<int>(m), count * idf);
    }
  }
  out.weights.resize(n_words, n_movies);
  out.weights.setFromTriplets(triplets.begin(), triplets.end());
  return out;
}

Eigen::MatrixXd knn_cosine_graph(const TfIdf& tfidf, std::size_t knn) {
  const Eigen::Index v = tfidf.weights.rows();
  const Eigen::Index n = tfidf.weights.cols();
  Eigen::VectorXd norms(v);
  for (Eigen::Index i = 0; i < v; ++i) norms(i) = tfidf.weights.row(i).norm();

  Eigen::MatrixXd graph = Eigen::MatrixXd::Zero(v, v);
  Eigen::VectorXd dense_row(n);
  std::vector<std::pair<double, Eigen::Index>> sims;
  for (Eigen::Index i = 0; i < v; ++i) {
    if (norms(i) == 0.0) continue;
    dense_row = tfidf.weights.row(i).transpose();
    const Eigen::VectorXd dots = tfidf.weights * dense_row;
    sims.clear();
    for (Eigen::Index j = 0; j < v; ++j) {
      if (j == i || norms(j) == 0.0) continue;
      const double s = dots(j) / (norms(i) * norms(j));
      if (s > 0.0) sims.emplace_back(s, j);
    }
    if (sims.empty()) continue;
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const double threshold = sims[std::min(knn, sims.size()) - 1].first;
    for (const auto& [s, j] : sims) {
      if (s < threshold) break;
      graph(i, j) = s;
    }
  }
  // Union symmetrization; cosine is symmetric so max picks the shared value.
  return graph.cwiseMax(graph.transpose());
}

SpectralEmbedding spectral_embed(const TfIdf& tfidf, const SpectralOptions& options) {
  const auto v = static_cast<std::size_t>(tfidf.weights.rows());
  if (options.dim >= v) {
    throw DataError("spectral_embed: dim " + std::to_string(options.dim) +
                    " must be below the vocabulary size " + std::to_string(v));
  }
  if (options.regularization <= 0.0) throw ConfigError("spectral_embed: regularization must be > 0");

  const Eigen::MatrixXd w = knn_cosine_graph(tfidf, options.knn);
  const Eigen::VectorXd degree = w.rowwise().sum().array() + options.regularization;
  const Eigen::VectorXd inv_sqrt = degree.array().rsqrt();

  SpectralEmbedding out;
  out.vocabulary = tfidf.vocabulary;
  out.laplacian = -(inv_sqrt.asDiagonal() * w * inv_sqrt.asDiagonal());
  out.laplacian.diagonal().array() += 1.0;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(out.laplacian);
  if (solver.info() != Eigen::Success) throw ConvergenceError("spectral_embed: eigensolver did not converge");

  const auto dim = static_cast<Eigen::Index>(options.dim);
  out.eigenvalues = solver.eigenvalues().segment(1, dim);
  out.eigenvectors = solver.eigenvectors().middleCols(1, dim);

  for (Eigen::Index c = 0; c < dim; ++c) {
    auto col = out.eigenvectors.col(c);
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col(arg) < 0) col = -col;
    const double residual =
        (out.laplacian * col - out.eigenvalues(c) * col).cwiseAbs().maxCoeff();
    out.max_residual = std::max(out.max_residual, residual);
  }
  if (!(out.max_residual < options.residual_tolerance)) {
    throw ConvergenceError("spectral_embed: eigen residual " + std::to_string(out.max_residual) +
                           " exceeds tolerance " + std::to_string(options.residual_tolerance));
  }

  out.embedding = out.eigenvectors;
  for (Eigen::Index r = 0; r < out.embedding.rows(); ++r) {
    const double norm = out.embedding.row(r).norm();
    if (norm > 0.0) out.embedding.row(r) /= norm;
  }
  return out;
}

// ---------------------------------------------------------------------------

LexicalTable LexicalTable::parse(std::string_view text) {
  LexicalTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    std::vector<double> values;
    std::string token;
    while (fields >> token) {
      try {
        values.push_back(std::stod(token));
      } catch (const std::exception&) {
        throw ParseError("lexical table line " + std::to_string(line_no) + ": bad number '" + token + "'");
      }
    }
    if (line_no == 1 && values.size() == 1 && word.find_first_not_of("0123456789") == std::string::npos) {
      continue;  // "count dim" header
    }
    if (values.empty()) throw ParseError("lexical table line " + std::to_string(line_no) + ": no values");
    if (table.dim == 0) table.dim = values.size();
    if (values.size() != table.dim) {
      throw ParseError("lexical table line " + std::to_string(line_no) + ": expected " +
                       std::to_string(table.dim) + " values, got " + std::to_string(values.size()));
    }
    table.vectors.emplace(std::move(word), std::move(values));
  }
  return table;
}

LexicalTable LexicalTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexical table '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

KeywordVectors build_keyword_vectors(std::span<const std::string> vocabulary,
                                     const LexicalTable& lexical, const SpectralEmbedding& spectral) {
  KeywordVectors out;
  out.vocabulary.assign(vocabulary.begin(), vocabulary.end());
  const auto n = static_cast<Eigen::Index>(vocabulary.size());
  const auto lex_dim = static_cast<Eigen::Index>(lexical.dim == 0 ? kLexicalDim : lexical.dim);
  const Eigen::Index spec_dim = spectral.embedding.cols();
  out.lexical = Eigen::MatrixXd::Zero(n, lex_dim);
  out.spectral.resize(n, spec_dim);

  std::map<std::string, Eigen::Index> spectral_row;
  for (std::size_t i = 0; i < spectral.vocabulary.size(); ++i) {
    spectral_row.emplace(spectral.vocabulary[i], static_cast<Eigen::Index>(i));
  }

  std::vector<std::string> missing_spectral;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::string& kw = out.vocabulary[static_cast<std::size_t>(i)];
    const auto sit = spectral_row.find(kw);
    if (sit == spectral_row.end()) {
      missing_spectral.push_back(kw);
      continue;
    }
    out.spectral.row(i) = spectral.embedding.row(sit->second);

    if (const auto it = lexical.vectors.find(kw); it != lexical.vectors.end()) {
      out.lexical.row(i) = Eigen::Map<const Eigen::RowVectorXd>(it->second.data(), lex_dim);
      continue;
    }
    std::istringstream tokens(kw);
    std::string token;
    int found = 0;
    while (tokens >> token) {
      if (const auto it = lexical.vectors.find(token); it != lexical.vectors.end()) {
        out.lexical.row(i) += Eigen::Map<const Eigen::RowVectorXd>(it->second.data(), lex_dim);
        ++found;
      }
    }
    if (found > 0) {
      out.lexical.row(i) /= found;
    } else {
      out.oov.push_back(kw);
    }
  }
  if (!missing_spectral.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing_spectral.size() && i < 10; ++i) list += (i ? ", " : "") + missing_spectral[i];
    throw DataError("keywords without a spectral vector (" + std::to_string(missing_spectral.size()) + "): " + list);
  }
  if (!out.oov.empty()) {
    spdlog::warn("{} keywords have no lexical vector; using zeros", out.oov.size());
  }
  out.combined.resize(n, lex_dim + spec_dim);
  out.combined << out.lexical, out.spectral;
  return out;
}

KeywordVectors build_keyword_vectors(const LexicalTable& lexical, const SpectralEmbedding& spectral) {
  return build_keyword_vectors(spectral.vocabulary, lexical, spectral);
}

// ---------------------------------------------------------------------------

namespace {

/// Condensed symmetric distance storage for i != j.
class PairwiseDistances {
 public:
  explicit PairwiseDistances(std::size_t n) : n_(n), data_(n * (n - 1) / 2) {}

  double& operator()(std::size_t i, std::size_t j) { return data_[index(i, j)]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[index(i, j)]; }

 private:
  std::size_t index(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return i * n_ - i * (i + 1) / 2 + (j - i - 1);
  }

  std::size_t n_;
  std::vector<double> data_;
};

}  // namespace

std::vector<Merge> average_link_dendrogram(const Eigen::MatrixXd& points) {
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<Merge> merges;
  if (n < 2) return merges;
  merges.reserve(n - 1);

  PairwiseDistances dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist(i, j) = (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
    }
  }

  // Slot i always holds the cluster whose smallest member is i.
  std::vector<bool> active(n, true);
  std::vector<double> size(n, 1.0);
  std::vector<std::size_t> nearest(n, 0);
  std::vector<double> nearest_dist(n, 0.0);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  auto refresh = [&](std::size_t i) {
    nearest_dist[i] = kInf;
    nearest[i] = i;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !active[j]) continue;
      const double d = dist(i, j);
      if (d < nearest_dist[i]) {  // strict: the smaller index wins ties
        nearest_dist[i] = d;
        nearest[i] = j;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) refresh(i);

  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      if (best == n) {
        best = i;
        continue;
      }
      const auto key_i = std::make_tuple(nearest_dist[i], std::min(i, nearest[i]), std::max(i, nearest[i]));
      const auto key_b =
          std::make_tuple(nearest_dist[best], std::min(best, nearest[best]), std::max(best, nearest[best]));
      if (key_i < key_b) best = i;
    }
    const std::size_t a = std::min(best, nearest[best]);
    const std::size_t b = std::max(best, nearest[best]);
    merges.push_back({a, b, nearest_dist[best]});

    const double na = size[a];
    const double nb = size[b];
    active[b] = false;
    size[a] = na + nb;
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a) continue;
      dist(a, k) = (na * dist(a, k) + nb * dist(b, k)) / (na + nb);
    }
    refresh(a);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a) continue;
      if (nearest[k] == a || nearest[k] == b) {
        refresh(k);
      } else if (dist(a, k) < nearest_dist[k] || (dist(a, k) == nearest_dist[k] && a < nearest[k])) {
        nearest_dist[k] = dist(a, k);
        nearest[k] = a;
      }
    }
  }
  return merges;
}

std::vector<int> cut_dendrogram(std::size_t n, std::span<const Merge> merges, std::size_t k) {
  if (k < 1 || k > n) {
    throw DataError("cluster count k=" + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  }
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  const std::size_t steps = n - k;
  if (merges.size() < steps) throw DataError("dendrogram has too few merges for k");
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t ra = find(merges[s].a);
    const std::size_t rb = find(merges[s].b);
    if (ra == rb) throw DataError("dendrogram merges a cluster with itself");
    parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> label(n, -1);
  std::vector<int> root_label(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find(i);
    if (root_label[r] < 0) root_label[r] = next++;
    label[i] = root_label[r];
  }
  return label;
}

ClusterModel cluster_keywords(const KeywordVectors& vectors, std::size_t k) {
  const std::size_t n = vectors.vocabulary.size();
  if (k < 1 || k > n) {
    throw DataError("cluster_keywords: k=" + std::to_string(k) + " exceeds vocabulary size " + std::to_string(n));
  }
  if (!std::is_sorted(vectors.vocabulary.begin(), vectors.vocabulary.end())) {
    throw DataError("cluster_keywords: vocabulary must be sorted");
  }
  ClusterModel model;
  model.k = k;
  model.vocabulary = vectors.vocabulary;
  model.merges = average_link_dendrogram(vectors.combined);
  const auto labels = cut_dendrogram(n, model.merges, k);
  for (std::size_t i = 0; i < n; ++i) model.assignment.emplace(vectors.vocabulary[i], labels[i]);
  return model;
}

int ClusterModel::cluster_of(const std::string& keyword) const {
  const auto it = assignment.find(keyword);
  if (it == assignment.end()) throw VocabularyError("unknown keyword '" + keyword + "'");
  return it->second;
}

json ClusterModel::to_json() const {
  json merges_json = json::array();
  for (const auto& m : merges) merges_json.push_back(json::array({m.a, m.b, m.distance}));
  json assign = json::object();
  for (const auto& [kw, id] : assignment) assign[kw] = id;
  return {{"k", k}, {"assignment", assign}, {"merges", merges_json}};
}

ClusterModel ClusterModel::from_json(const json& j) {
  ClusterModel m;
  m.k = j.at("k").get<std::size_t>();
  for (const auto& [kw, id] : j.at("assignment").items()) {
    const int cid = id.get<int>();
    if (cid < 0 || static_cast<std::size_t>(cid) >= m.k) {
      throw SchemaError("cluster id " + std::to_string(cid) + " for '" + kw + "' outside [0, k)");
    }
    m.assignment.emplace(kw, cid);
  }
  for (const auto& [kw, id] : m.assignment) m.vocabulary.push_back(kw);
  if (j.contains("merges")) {
    for (const auto& item : j.at("merges")) {
      m.merges.push_back({item.at(0).get<std::size_t>(), item.at(1).get<std::size_t>(), item.at(2).get<double>()});
    }
  }
  return m;
}

void ClusterModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write cluster model '" + path.string() + "'");
  out << to_json().dump() << '\n';
}

ClusterModel ClusterModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open cluster model '" + path.string() + "'");
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::vector<int>> map_movie_keywords(const Corpus& corpus, const ClusterModel& model) {
  std::vector<std::vector<int>> out(corpus.size());
  std::set<std::string> unknown;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (const auto& kw : corpus[i].keywords) {
      const auto it = model.assignment.find(kw);
      if (it == model.assignment.end()) {
        unknown.insert(kw);
        continue;
      }
      out[i].push_back(it->second);
    }
    std::sort(out[i].begin(), out[i].end());
    out[i].erase(std::unique(out[i].begin(), out[i].end()), out[i].end());
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& kw : unknown) list += (list.empty() ? "" : ", ") + kw;
    throw VocabularyError("keywords missing from the cluster model: " + list);
  }
  return out;
}

}  // namespace boxoffice
