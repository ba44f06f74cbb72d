#include "boxoffice/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "boxoffice/error.hpp"
#include "boxoffice/random.hpp"

namespace boxoffice {

double evaluate_huber(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) {
    throw ShapeError("huber: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(targets.size()) + " targets");
  }
  if (predictions.empty()) throw DataError("huber: no predictions");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) sum += huber_loss(targets[i], predictions[i]);
  return sum / static_cast<double>(predictions.size());
}

MapeReport mape_buckets(std::span<const double> predictions_log10, std::span<const double> targets_usd) {
  if (predictions_log10.size() != targets_usd.size()) throw ShapeError("mape: predictions and targets differ in length");
  constexpr double inf = std::numeric_limits<double>::infinity();
  MapeReport r;
  const std::array<const char*, 4> labels = {"<$1M", "$1M-$100M", "$100M-$1B", ">$1B"};
  for (std::size_t b = 0; b < r.buckets.size(); ++b) {
    r.buckets[b].label = labels[b];
    r.buckets[b].lower = b == 0 ? 0.0 : kMapeEdges[b - 1];
    r.buckets[b].upper = b < kMapeEdges.size() ? kMapeEdges[b] : inf;
  }
  std::array<double, 4> sums{};
  for (std::size_t i = 0; i < targets_usd.size(); ++i) {
    const double y = targets_usd[i];
    if (!std::isfinite(y) || y < 0.0) throw DataError("mape: target " + std::to_string(i) + " is negative or not finite");
    if (y == 0.0) {
      ++r.excluded_zero;
      continue;
    }
    const double pred = std::pow(10.0, predictions_log10[i]);
    std::size_t b = 0;
    while (b + 1 < r.buckets.size() && y >= r.buckets[b].upper) ++b;
    sums[b] += std::abs(pred - y) / y;
    ++r.buckets[b].count;
  }
  for (std::size_t b = 0; b < r.buckets.size(); ++b) {
    if (r.buckets[b].count > 0) r.buckets[b].mape = sums[b] / static_cast<double>(r.buckets[b].count);
  }
  return r;
}

nlohmann::json MapeReport::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : buckets) {
    nlohmann::json e{{"bucket", b.label}, {"count", b.count}, {"lower_usd", b.lower}};
    e["upper_usd"] = std::isinf(b.upper) ? nlohmann::json(nullptr) : nlohmann::json(b.upper);
    e["mape"] = b.mape ? nlohmann::json(*b.mape) : nlohmann::json(nullptr);
    out.push_back(std::move(e));
  }
  return {{"buckets", std::move(out)}, {"excluded_zero_revenue", excluded_zero}};
}

double percent_change(double loss, double baseline) {
  if (baseline == 0.0) throw DataError("relative change against a zero baseline");
  return (loss - baseline) / baseline;
}

std::optional<double> MetricsReport::relative_change() const {
  if (!baseline_huber) return std::nullopt;
  return percent_change(test_huber, *baseline_huber);
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j{{"test_size", test_size}, {"test_huber", test_huber}, {"mape", mape.to_json()}};
  if (baseline_huber) {
    j["baseline_huber"] = *baseline_huber;
    j["relative_change"] = *relative_change();
  }
  return j;
}

std::string MetricsReport::to_table() const {
  std::ostringstream out;
  out << fmt::format("test movies       {}\n", test_size);
  out << fmt::format("test Huber        {:.6f}\n", test_huber);
  if (baseline_huber) {
    out << fmt::format("baseline Huber    {:.6f}\n", *baseline_huber);
    out << fmt::format("change            {:+.2f}%\n", 100.0 * *relative_change());
  }
  out << "\nrevenue bucket    movies  MAPE\n";
  for (const auto& b : mape.buckets) {
    out << fmt::format("{:<16}  {:>6}  {}\n", b.label, b.count, b.mape ? fmt::format("{:.3f}", *b.mape) : "-");
  }
  if (mape.excluded_zero > 0) out << fmt::format("zero revenue      {:>6}  (excluded)\n", mape.excluded_zero);
  return out.str();
}

MetricsReport make_report(std::span<const double> predictions_log10, std::span<const double> targets_log10,
                          std::span<const double> revenue_usd, std::optional<double> baseline_huber) {
  MetricsReport r;
  r.test_size = predictions_log10.size();
  r.test_huber = evaluate_huber(predictions_log10, targets_log10);
  r.mape = mape_buckets(predictions_log10, revenue_usd);
  r.baseline_huber = baseline_huber;
  return r;
}

// ---------------------------------------------------------------------------

std::vector<AblationCell> AblationTable::cells() const {
  std::vector<AblationCell> out;
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> groups;
  std::vector<std::pair<std::string, std::size_t>> order;
  for (const auto& r : runs) {
    auto key = std::make_pair(r.arm, r.size);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(r.test_huber);
  }
  for (const auto& key : order) {
    const auto& v = groups[key];
    AblationCell c{key.first, key.second, v.size()};
    c.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - c.mean) * (x - c.mean);
      c.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    out.push_back(c);
  }
  return out;
}

std::string AblationTable::to_csv() const {
  std::string out = "config,size,seed,loss\n";
  for (const auto& r : runs) out += fmt::format("{},{},{},{:.17g}\n", r.arm, r.size, r.seed, r.test_huber);
  return out;
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : cells()) {
    cs.push_back({{"config", c.arm}, {"size", c.size}, {"trials", c.trials}, {"mean", c.mean}, {"std", c.stddev}});
  }
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : runs) rs.push_back({{"config", r.arm}, {"size", r.size}, {"seed", r.seed}, {"loss", r.test_huber}});
  return {{"cells", std::move(cs)}, {"runs", std::move(rs)}};
}

AblationTable ablation_curves(std::span<const MovieExample> examples, const SplitRows& rows,
                              const EncoderConfig& config, std::span<const AblationArm> arms,
                              std::span<const std::size_t> sizes, std::span<const std::uint64_t> seeds) {
  if (arms.empty() || sizes.empty() || seeds.empty()) throw ConfigError("ablation needs at least one arm, size and seed");
  for (std::size_t size : sizes) {
    if (size == 0 || size > rows.train.size()) {
      throw ConfigError("ablation size " + std::to_string(size) + " is outside the training split (1.." +
                        std::to_string(rows.train.size()) + ")");
    }
  }
  AblationTable table;
  for (const auto& arm : arms) {
    for (std::size_t size : sizes) {
      for (std::uint64_t seed : seeds) {
        Rng rng = substream(seed, "ablation.sample." + std::to_string(size));
        std::vector<std::size_t> train = rows.train;
        shuffle(train, rng);
        train.resize(size);
        std::sort(train.begin(), train.end());
        const SplitRows sub{train, rows.val, rows.test};

        Encoder encoder(config, seed);
        if (arm.pretrain) {
          TrainConfig pc = *arm.pretrain;
          pc.seed = seed;
          pretrain(encoder, examples, sub, pc);
        }
        TrainConfig fc = arm.finetune;
        fc.seed = seed;
        const FinetuneResult fr = finetune(encoder, examples, sub, fc);
        table.runs.push_back({arm.name, size, seed, fr.test_huber});
      }
    }
  }
  return table;
}

// ---------------------------------------------------------------------------

RowVec keyword_embedding(const Encoder& encoder, int keyword_token) {
  const int vocab = encoder.config().vocab_size(Family::keyword);
  if (keyword_token < 0 || keyword_token >= vocab) {
    throw VocabularyError("keyword token " + std::to_string(keyword_token) + " is outside the keyword vocabulary (" +
                          std::to_string(vocab) + " clusters)");
  }
  const SequenceLayout& layout = encoder.layout();
  InputSequence seq;
  seq.slots.assign(layout.size(), Slot{0, 0.0, true});
  seq.slots[0].pad = false;
  seq.slots[layout.keyword_begin()] = Slot{keyword_token, 0.0, false};
  const Mat out = encoder.forward(seq);
  return out.row(static_cast<Eigen::Index>(layout.keyword_begin()));
}

Mat object_matrix(const PosterObjectSet& objects, std::size_t limit) {
  const std::size_t m = std::min(objects.count(), limit);
  Mat z(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(objects.width));
  for (std::size_t o = 0; o < m; ++o) {
    const auto values = objects.object(o);
    for (std::size_t f = 0; f < objects.width; ++f) z(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f)) = values[f];
  }
  return z;
}

std::vector<RetrievalHit> retrieve_posters(const Encoder& encoder, int keyword_token,
                                           std::span<const MovieExample> examples, std::size_t k) {
  const Mat x = keyword_embedding(encoder, keyword_token);
  std::vector<RetrievalHit> hits;
  for (const auto& ex : examples) {
    if (ex.objects.count() == 0) continue;
    const Mat z = encoder.project_objects(object_matrix(ex.objects, static_cast<std::size_t>(encoder.config().max_objects)));
    hits.push_back({ex.id, vg_similarity(x, z)});
  }
  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.movie_id < b.movie_id;
  });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

}  // namespace boxoffice
