#pragma once

// Deliberately naive reference implementations. They share no code with the
// library beyond plain data types.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "boxoffice/copycat.hpp"
#include "boxoffice/dataset.hpp"
#include "boxoffice/keywords.hpp"
#include "boxoffice/random.hpp"

namespace oracle {

/// |A ∩ B| / |A ∪ B| by enumerating the union element by element.
double jaccard(const std::vector<int>& a, const std::vector<int>& b);

std::vector<std::size_t> blockbusters(const boxoffice::Corpus& corpus, double min_revenue = 1e7, double min_ratio = 3.0);

/// For every (blockbuster, movie) pair, decides membership in the top-n by
/// counting the eligible candidates that beat the movie, then resolves claims.
std::vector<boxoffice::CopycatAnnotation> copycats(const boxoffice::Corpus& corpus,
                                                   const std::vector<std::vector<int>>& sets,
                                                   const std::vector<std::size_t>& blockbusters,
                                                   int window_years = 10, std::size_t top_n = 10);

/// Average-link agglomeration recomputing every cluster distance from the raw
/// points at every step.
std::vector<boxoffice::Merge> dendrogram(const Eigen::MatrixXd& points);

struct CopycatCase {
  boxoffice::Corpus corpus;
  std::vector<std::vector<int>> sets;
};

/// Random corpus with coarse dates, a small cluster alphabet (so similarity
/// ties are common) and roughly a quarter blockbusters.
CopycatCase random_copycat_case(boxoffice::Rng& rng, std::size_t movies);

}  // namespace oracle
