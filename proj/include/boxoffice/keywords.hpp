#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <json.hpp>

#include "boxoffice/dataset.hpp"

namespace boxoffice {

inline constexpr std::size_t kLexicalDim = 300;
inline constexpr std::size_t kSpectralDim = 50;
inline constexpr std::size_t kDefaultClusterCount = 1414;

/// Keyword x movie TF-IDF weights. Rows follow `vocabulary` (sorted).
struct TfIdf {
  std::vector<std::string> vocabulary;
  Eigen::SparseMatrix<double, Eigen::RowMajor> weights;

  std::size_t row_of(const std::string& keyword) const;
};

/// entry(w, m) = tf(w, m) * ln(N / df(w)).
TfIdf build_tfidf(const Corpus& corpus);

struct SpectralOptions {
  std::size_t dim = kSpectralDim;
  double regularization = 1e-3;
  std::size_t knn = 15;
  double residual_tolerance = 1e-6;
};

struct SpectralEmbedding {
  std::vector<std::string> vocabulary;
  Eigen::VectorXd eigenvalues;    // dim smallest nontrivial, ascending
  Eigen::MatrixXd eigenvectors;   // vocab x dim, unit-norm columns
  Eigen::MatrixXd embedding;      // eigenvectors with l2-normalized rows
  Eigen::MatrixXd laplacian;      // the regularized normalized Laplacian
  double max_residual = 0.0;
};

/// Symmetric kNN cosine graph over TF-IDF rows (ties at the k-th similarity
/// are all kept), L = I - D^-1/2 W D^-1/2 with D = deg + reg, and the
/// eigenvectors of the `dim` smallest eigenvalues after the first.
SpectralEmbedding spectral_embed(const TfIdf& tfidf, const SpectralOptions& options = {});

/// Symmetric kNN similarity graph used by spectral_embed (exposed for tests).
Eigen::MatrixXd knn_cosine_graph(const TfIdf& tfidf, std::size_t knn);

struct LexicalTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;

  /// Whitespace-separated "word v1 ... vD" lines. A leading "count dim" header
  /// line (word2vec/fastText .vec style) is skipped.
  static LexicalTable load(const std::filesystem::path& path);
  static LexicalTable parse(std::string_view text);
};

struct KeywordVectors {
  std::vector<std::string> vocabulary;
  Eigen::MatrixXd lexical;   // vocab x lexical dim
  Eigen::MatrixXd spectral;  // vocab x spectral dim
  Eigen::MatrixXd combined;  // lexical ++ spectral
  std::vector<std::string> oov;  // keywords with no lexical vector (zero-filled)
};

/// Multiword keywords use the mean of their token vectors. Missing lexical
/// vectors are zero-filled and listed in `oov`; a keyword without a spectral
/// row throws DataError.
KeywordVectors build_keyword_vectors(std::span<const std::string> vocabulary,
                                     const LexicalTable& lexical, const SpectralEmbedding& spectral);
KeywordVectors build_keyword_vectors(const LexicalTable& lexical, const SpectralEmbedding& spectral);

struct Merge {
  std::size_t a = 0;  // smallest member index of each merged cluster, a < b
  std::size_t b = 0;
  double distance = 0.0;
};

struct ClusterModel {
  std::size_t k = 0;
  std::vector<std::string> vocabulary;
  std::map<std::string, int> assignment;
  std::vector<Merge> merges;  // full dendrogram, in merge order

  int cluster_of(const std::string& keyword) const;

  nlohmann::json to_json() const;
  static ClusterModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ClusterModel load(const std::filesystem::path& path);
};

/// Average-link agglomeration (Euclidean). Returns the complete dendrogram;
/// ties go to the smallest (min-id, min-id) pair.
std::vector<Merge> average_link_dendrogram(const Eigen::MatrixXd& points);

/// Cuts a dendrogram at k clusters. Cluster ids are ordered by smallest member.
std::vector<int> cut_dendrogram(std::size_t n, std::span<const Merge> merges, std::size_t k);

ClusterModel cluster_keywords(const KeywordVectors& vectors, std::size_t k);

/// Sorted, deduplicated cluster ids per movie. Throws VocabularyError naming
/// every unknown keyword.
std::vector<std::vector<int>> map_movie_keywords(const Corpus& corpus, const ClusterModel& model);

}  // namespace boxoffice
