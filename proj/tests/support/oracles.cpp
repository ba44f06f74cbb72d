#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <tuple>

namespace oracle {

using boxoffice::CopycatAnnotation;
using boxoffice::Corpus;
using boxoffice::Merge;

double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  const std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::set<int> all = sa;
  all.insert(sb.begin(), sb.end());
  if (all.empty()) return 0.0;
  int both = 0;
  for (int x : all) {
    if (sa.count(x) && sb.count(x)) ++both;
  }
  return static_cast<double>(both) / static_cast<double>(all.size());
}

std::vector<std::size_t> blockbusters(const Corpus& corpus, double min_revenue, double min_ratio) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& m = corpus[i];
    if (!m.budget_usd) continue;
    const bool rich = m.revenue_usd >= min_revenue;
    const bool profitable = *m.budget_usd == 0.0 || m.revenue_usd >= min_ratio * *m.budget_usd;
    if (rich && profitable) out.push_back(i);
  }
  return out;
}

namespace {

using Key = std::tuple<int, int, int>;

Key date_key(const boxoffice::Date& d) { return {d.year, d.month, d.day}; }

Key window_end(const boxoffice::Date& d, int years) {
  int day = d.day;
  if (d.month == 2 && d.day == 29) {
    const int y = d.year + years;
    const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    if (!leap) day = 28;
  }
  return {d.year + years, d.month, day};
}

// Chronological order with the id as tie-break.
bool before(const boxoffice::MovieRecord& a, const boxoffice::MovieRecord& b) {
  return std::make_tuple(date_key(a.release_date), a.id) < std::make_tuple(date_key(b.release_date), b.id);
}

}  // namespace

std::vector<CopycatAnnotation> copycats(const Corpus& corpus, const std::vector<std::vector<int>>& sets,
                                        const std::vector<std::size_t>& blockbusters, int window_years,
                                        std::size_t top_n) {
  const std::size_t n = corpus.size();
  struct Claim {
    std::size_t blockbuster;
    double similarity;
    double rank;
  };
  std::vector<std::vector<Claim>> claims(n);

  for (std::size_t b : blockbusters) {
    const Key start = date_key(corpus[b].release_date);
    const Key stop = window_end(corpus[b].release_date, window_years);
    std::vector<double> sim(n, 0.0);
    std::vector<bool> eligible(n, false);
    for (std::size_t m = 0; m < n; ++m) {
      if (m == b) continue;
      const Key d = date_key(corpus[m].release_date);
      if (d <= start || d > stop) continue;
      sim[m] = jaccard(sets[b], sets[m]);
      eligible[m] = sim[m] > 0.0;
    }
    std::vector<bool> chosen(n, false);
    for (std::size_t m = 0; m < n; ++m) {
      if (!eligible[m]) continue;
      std::size_t better = 0;
      for (std::size_t o = 0; o < n; ++o) {
        if (o == m || !eligible[o]) continue;
        if (sim[o] > sim[m] || (sim[o] == sim[m] && before(corpus[o], corpus[m]))) ++better;
      }
      chosen[m] = better < top_n;
    }
    for (std::size_t m = 0; m < n; ++m) {
      if (!chosen[m]) continue;
      std::size_t earlier = 0;
      for (std::size_t o = 0; o < n; ++o) {
        if (chosen[o] && o != m && before(corpus[o], corpus[m])) ++earlier;
      }
      claims[m].push_back({b, sim[m], static_cast<double>(earlier + 1) / static_cast<double>(top_n)});
    }
  }

  std::vector<CopycatAnnotation> out(n);
  for (std::size_t m = 0; m < n; ++m) {
    out[m].movie_id = corpus[m].id;
    if (claims[m].empty()) continue;
    const Claim* best = &claims[m][0];
    for (const auto& c : claims[m]) {
      if (c.similarity > best->similarity ||
          (c.similarity == best->similarity && before(corpus[c.blockbuster], corpus[best->blockbuster]))) {
        best = &c;
      }
    }
    out[m].is_copycat = true;
    out[m].similarity = best->similarity;
    out[m].rank = best->rank;
    out[m].source_blockbuster = corpus[best->blockbuster].id;
  }
  return out;
}

std::vector<Merge> dendrogram(const Eigen::MatrixXd& points) {
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < n; ++i) clusters.push_back({i});
  auto linkage = [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    double sum = 0.0;
    for (std::size_t i : a) {
      for (std::size_t j : b) {
        sum += (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
      }
    }
    return sum / static_cast<double>(a.size() * b.size());
  };
  std::vector<Merge> merges;
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    // Clusters stay sorted by smallest member, so scanning i < j in order and
    // keeping strict improvements yields the smallest (min-id, min-id) pair.
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        const double d = linkage(clusters[i], clusters[j]);
        if (d < best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    merges.push_back({clusters[bi].front(), clusters[bj].front(), best});
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    std::sort(clusters[bi].begin(), clusters[bi].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  return merges;
}

CopycatCase random_copycat_case(boxoffice::Rng& rng, std::size_t movies) {
  using boxoffice::uniform_index;
  using boxoffice::uniform_real;
  CopycatCase c;
  for (std::size_t i = 0; i < movies; ++i) {
    boxoffice::MovieRecord m;
    m.id = "r" + std::to_string(i);
    // Coarse dates make same-day releases and window edges common.
    m.release_date = {1990 + static_cast<int>(uniform_index(rng, 30)), 1 + static_cast<int>(uniform_index(rng, 12)),
                      uniform_index(rng, 4) == 0 ? 29 : 1 + static_cast<int>(uniform_index(rng, 3))};
    if (m.release_date.month == 2 && m.release_date.day == 29 && m.release_date.year % 4 != 0) m.release_date.day = 28;
    m.release_year = m.release_date.year;
    m.release_month = m.release_date.month;
    m.revenue_usd = std::pow(10.0, 5.0 + 4.0 * uniform_real(rng));
    if (uniform_index(rng, 20) > 0) m.budget_usd = m.revenue_usd * std::pow(10.0, -1.2 + 1.4 * uniform_real(rng));
    m.franchise = uniform_index(rng, 4) == 0;
    m.genres = {"G" + std::to_string(uniform_index(rng, 3))};
    std::set<int> s;
    const std::size_t k = uniform_index(rng, 5);
    for (std::size_t j = 0; j < k; ++j) s.insert(static_cast<int>(uniform_index(rng, 12)));
    c.sets.emplace_back(s.begin(), s.end());
    c.corpus.push_back(std::move(m));
  }
  return c;
}

}  // namespace oracle
