#include "boxoffice/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "boxoffice/error.hpp"
#include "boxoffice/parallel.hpp"

namespace boxoffice {

Eigen::VectorXd attention_rollout(std::span<const Mat> attention, std::span<const Mat> gradients) {
  if (attention.empty() || attention.size() != gradients.size()) {
    throw ContractError("rollout needs captured attention and gradients for every layer (got " +
                        std::to_string(attention.size()) + " and " + std::to_string(gradients.size()) + ")");
  }
  const Eigen::Index n = attention[0].rows();
  Mat rolled;
  for (std::size_t l = 0; l < attention.size(); ++l) {
    const Mat& a = attention[l];
    const Mat& g = gradients[l];
    if (a.rows() != n || a.cols() != n || g.rows() != n || g.cols() != n) {
      throw ContractError("rollout: layer " + std::to_string(l) + " capture is not " + std::to_string(n) + "x" +
                          std::to_string(n));
    }
    const Mat gated = g.cwiseMax(0.0).cwiseProduct(a);
    rolled = l == 0 ? gated : Mat(gated * rolled);
  }
  return rolled.row(0).transpose();
}

Eigen::VectorXd attention_rollout(const Encoder& encoder, const InputSequence& seq, double target) {
  if (!encoder.has_head()) throw NotFinetunedError("rollout needs a finetuned regression head");
  ForwardCache cache;
  std::vector<Mat> attention;
  const Mat output = encoder.forward(seq, &cache, &attention);
  const double d_pred = huber_grad(target, encoder.predict_from_output(output, seq));
  const RowVec d_pooled = d_pred * encoder.params().head_w.col(0).transpose();
  EncoderParams scratch = encoder.params().zeros_like();
  std::vector<Mat> gradients;
  encoder.backward(seq, cache, encoder.pool_backward(d_pooled, seq), scratch, &gradients);
  return attention_rollout(attention, gradients);
}

namespace {

struct MeanAcc {
  double sum = 0.0;
  std::size_t count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

std::map<std::string, double> scaled_to_max(const std::map<std::string, double>& m) {
  double top = 0.0;
  for (const auto& [k, v] : m) top = std::max(top, v);
  std::map<std::string, double> out;
  for (const auto& [k, v] : m) out[k] = top > 0.0 ? v / top : v;
  return out;
}

std::vector<std::pair<std::string, double>> sorted_desc(const std::map<std::string, double>& m) {
  std::vector<std::pair<std::string, double>> out(m.begin(), m.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

std::string token_label(const TokenLabel& label, Family family, int token) {
  if (token == kAbsentCategory) return "(none)";
  return label ? label(family, token) : std::to_string(token);
}

int category_of(const Slot& s) { return s.pad ? kAbsentCategory : s.token; }

bool tracked_per_value(const std::string& variable) { return variable == "Genre" || variable == "Month"; }

}  // namespace

RolloutResult aggregate_rollout(std::vector<Eigen::VectorXd> per_example, std::span<const InputSequence> sequences,
                                const SequenceLayout& layout, const TokenLabel& label) {
  if (per_example.empty()) throw DataError("rollout aggregation needs at least one example");
  if (per_example.size() != sequences.size()) throw ShapeError("rollout aggregation: vectors and sequences differ in count");
  std::map<std::string, MeanAcc> variables;
  std::map<std::string, MeanAcc> values;
  for (std::size_t e = 0; e < per_example.size(); ++e) {
    const Eigen::VectorXd& a = per_example[e];
    const InputSequence& seq = sequences[e];
    if (static_cast<std::size_t>(a.size()) != layout.size() || seq.slots.size() != layout.size()) {
      throw ShapeError("rollout aggregation: example " + std::to_string(e) + " does not match the layout");
    }
    std::map<std::string, MeanAcc> local;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const FieldSpec& f = layout.field(i);
      if (f.kind == SlotKind::cls || seq.slots[i].pad) continue;
      const double v = a(static_cast<Eigen::Index>(i));
      local[f.variable].add(v);
      if (f.kind == SlotKind::token && tracked_per_value(f.variable)) {
        values[f.variable + "=" + token_label(label, f.family, seq.slots[i].token)].add(v);
      }
    }
    for (const auto& [name, acc] : local) variables[name].add(acc.mean());
  }
  RolloutResult r;
  r.per_example = std::move(per_example);
  for (const auto& [k, acc] : variables) r.variables[k] = acc.mean();
  for (const auto& [k, acc] : values) r.values[k] = acc.mean();
  r.variables_normalized = scaled_to_max(r.variables);
  r.values_normalized = scaled_to_max(r.values);
  return r;
}

std::vector<std::pair<std::string, double>> RolloutResult::ranking() const { return sorted_desc(variables_normalized); }

nlohmann::json RolloutResult::to_json() const {
  nlohmann::json j;
  j["examples"] = per_example.size();
  j["variables"] = variables;
  j["variables_normalized"] = variables_normalized;
  j["values"] = values;
  j["values_normalized"] = values_normalized;
  nlohmann::json ranked = nlohmann::json::array();
  for (const auto& [k, v] : ranking()) ranked.push_back({{"variable", k}, {"influence", v}});
  j["ranking"] = std::move(ranked);
  return j;
}

// ---------------------------------------------------------------------------
// LIME

LimeStats LimeStats::fit(std::span<const InputSequence> train, const SequenceLayout& layout, std::size_t max_categories) {
  if (train.empty()) throw DataError("lime: no training sequences to take marginals from");
  LimeStats stats;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const FieldSpec& f = layout.field(i);
    if (f.kind == SlotKind::cls) continue;
    if (f.kind == SlotKind::token) {
      switch (f.family) {
        case Family::genre:
        case Family::crew:
        case Family::actor:
        case Family::keyword:
        case Family::franchise_name:
          continue;
        default:
          break;
      }
    }
    LimeFeature feature;
    feature.variable = f.variable;
    feature.slot = i;
    feature.family = f.family;
    feature.numeral = f.kind == SlotKind::numeral;
    std::set<int> seen;
    for (const auto& seq : train) {
      if (seq.slots.size() != layout.size()) throw ShapeError("lime: training sequence does not match the layout");
      feature.marginal.push_back(seq.slots[i]);
      if (!feature.numeral) seen.insert(category_of(seq.slots[i]));
    }
    if (!feature.numeral) {
      if (seen.size() > max_categories) continue;
      feature.categories.assign(seen.begin(), seen.end());
    }
    stats.features.push_back(std::move(feature));
  }
  stats.fitted = true;
  return stats;
}

std::vector<InputSequence> lime_perturb(const InputSequence& seq, const LimeStats& stats, std::size_t samples, Rng& rng) {
  if (!stats.fitted) throw ContractError("lime: training statistics are missing");
  std::vector<InputSequence> out(samples, seq);
  for (auto& s : out) {
    for (const auto& f : stats.features) {
      if (f.slot >= s.slots.size()) throw ShapeError("lime: feature slot outside the sequence");
      s.slots[f.slot] = f.marginal[uniform_index(rng, f.marginal.size())];
    }
  }
  return out;
}

Predictor encoder_predictor(const Encoder& encoder, int workers) {
  if (!encoder.has_head()) throw NotFinetunedError("model has no regression head; run finetune first");
  return [&encoder, workers](std::span<const InputSequence> seqs) {
    std::vector<double> out(seqs.size());
    parallel_chunks(seqs.size(), workers, [&](std::size_t, std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) out[i] = encoder.predict(seqs[i]);
    });
    return out;
  };
}

namespace {

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

/// Coordinate descent on standardized columns along a decreasing lambda path.
/// Returns one fit per lambda, in original column units.
std::vector<LassoFit> lasso_path(const Mat& x, const Eigen::VectorXd& y, std::span<const double> lambdas) {
  const auto n = x.rows();
  const auto p = x.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd sd(p);
  for (Eigen::Index j = 0; j < p; ++j) sd(j) = std::sqrt((x.col(j).array() - mean(j)).square().sum() * inv_n);
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (sd(j) > 1e-12 * std::max(1.0, std::abs(mean(j)))) active.push_back(j);
  }
  const auto q = static_cast<Eigen::Index>(active.size());
  Mat z(n, q);
  for (Eigen::Index k = 0; k < q; ++k) z.col(k) = (x.col(active[k]).array() - mean(active[k])) / sd(active[k]);
  const double y_mean = y.mean();
  const Eigen::VectorXd yc = y.array() - y_mean;
  const Mat gram = z.transpose() * z * inv_n;
  const Eigen::VectorXd corr = z.transpose() * yc * inv_n;
  const double y_scale = std::sqrt(yc.squaredNorm() * inv_n);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd resid_corr = corr;  // corr - gram * beta
  std::vector<LassoFit> fits;
  for (double lambda : lambdas) {
    if (y_scale > 0.0 && q > 0) {
      const double tol = 1e-10 * y_scale;
      bool converged = false;
      for (int sweep = 0; sweep < 100000 && !converged; ++sweep) {
        double max_delta = 0.0;
        for (Eigen::Index j = 0; j < q; ++j) {
          const double updated = soft_threshold(resid_corr(j) + gram(j, j) * beta(j), lambda) / gram(j, j);
          const double delta = updated - beta(j);
          if (delta != 0.0) {
            resid_corr -= gram.col(j) * delta;
            beta(j) = updated;
            max_delta = std::max(max_delta, std::abs(delta));
          }
        }
        converged = max_delta < tol;
      }
      if (!converged) throw ConvergenceError("lasso: coordinate descent did not converge at lambda " + std::to_string(lambda));
    }
    LassoFit fit;
    fit.lambda = lambda;
    fit.beta = Eigen::VectorXd::Zero(p);
    fit.intercept = y_mean;
    for (Eigen::Index k = 0; k < q; ++k) {
      const Eigen::Index j = active[k];
      fit.beta(j) = beta(k) / sd(j);
      fit.intercept -= fit.beta(j) * mean(j);
    }
    fits.push_back(std::move(fit));
  }
  return fits;
}

}  // namespace

LassoFit lasso_cv(const Mat& x, const Eigen::VectorXd& y, int folds, int lambdas, double lambda_ratio, Rng& rng) {
  const auto n = x.rows();
  if (y.size() != n) throw ShapeError("lasso: design and response differ in length");
  if (folds < 2 || n < folds) throw ConvergenceError("lasso: need at least " + std::to_string(std::max(folds, 2)) + " samples for cross-validation, got " + std::to_string(n));
  if (lambdas < 1 || !(lambda_ratio > 0.0 && lambda_ratio <= 1.0)) throw ConfigError("lasso: bad lambda path settings");

  // lambda_max from the full standardized design.
  const double inv_n = 1.0 / static_cast<double>(n);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  double lambda_max = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Eigen::VectorXd col = x.col(j).array() - mean(j);
    const double sd = std::sqrt(col.squaredNorm() * inv_n);
    if (sd > 1e-12 * std::max(1.0, std::abs(mean(j)))) lambda_max = std::max(lambda_max, std::abs(col.dot(yc)) * inv_n / sd);
  }
  std::vector<double> grid(static_cast<std::size_t>(lambdas));
  for (int k = 0; k < lambdas; ++k) {
    const double t = lambdas == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(lambdas - 1);
    grid[static_cast<std::size_t>(k)] = lambda_max * std::pow(lambda_ratio, t);
  }
  if (lambda_max == 0.0) return lasso_path(x, y, std::span<const double>(grid.data(), 1)).front();

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  auto cv_errors = [&]() {
    std::vector<double> cv_error(grid.size(), 0.0);
    for (int f = 0; f < folds; ++f) {
      std::vector<Eigen::Index> train, held;
      for (std::size_t i = 0; i < order.size(); ++i) {
        (static_cast<int>(i % static_cast<std::size_t>(folds)) == f ? held : train).push_back(static_cast<Eigen::Index>(order[i]));
      }
      const Mat xt = x(train, Eigen::all);
      const Eigen::VectorXd yt = y(train);
      const Mat xh = x(held, Eigen::all);
      const Eigen::VectorXd yh = y(held);
      const auto path = lasso_path(xt, yt, grid);
      for (std::size_t k = 0; k < path.size(); ++k) {
        const Eigen::VectorXd pred = (xh * path[k].beta).array() + path[k].intercept;
        cv_error[k] += (pred - yh).squaredNorm();
      }
    }
    return cv_error;
  };
  std::vector<double> cv_error = cv_errors();
  auto best = static_cast<std::size_t>(std::min_element(cv_error.begin(), cv_error.end()) - cv_error.begin());
  // An optimum at the end of the path means the grid stopped too early (typical
  // for a nearly noiseless neighbourhood): continue it downward with the same
  // spacing, no further than lambda_max * kLassoFloor.
  constexpr double kLassoFloor = 1e-8;
  const double step = lambdas > 1 ? std::pow(lambda_ratio, 1.0 / static_cast<double>(lambdas - 1)) : 1.0;
  while (best + 1 == grid.size() && step < 1.0 && grid.back() * step >= lambda_max * kLassoFloor) {
    for (int k = 1; k < lambdas && grid.back() * step >= lambda_max * kLassoFloor; ++k) grid.push_back(grid.back() * step);
    cv_error = cv_errors();
    best = static_cast<std::size_t>(std::min_element(cv_error.begin(), cv_error.end()) - cv_error.begin());
  }
  return lasso_path(x, y, std::span<const double>(grid.data(), best + 1)).back();
}

LimeResult lime_explain(const Predictor& predict, const InputSequence& seq, const LimeStats& stats,
                        const LimeOptions& options, Rng& rng, const TokenLabel& label) {
  const auto samples = lime_perturb(seq, stats, options.samples, rng);
  const std::vector<double> y = predict(samples);
  if (y.size() != samples.size()) throw ShapeError("lime: predictor returned the wrong number of values");

  struct Column {
    const LimeFeature* feature;
    int category;
  };
  std::vector<Column> columns;
  LimeResult result;
  for (const auto& f : stats.features) {
    if (f.numeral) {
      columns.push_back({&f, 0});
      continue;
    }
    const int own = category_of(seq.slots[f.slot]);
    result.original[f.variable] = token_label(label, f.family, own);
    for (int c : f.categories) {
      if (c != own) columns.push_back({&f, c});
    }
  }
  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto p = static_cast<Eigen::Index>(columns.size());
  Mat x(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < p; ++j) {
      const Column& c = columns[static_cast<std::size_t>(j)];
      const Slot& slot = s.slots[c.feature->slot];
      x(i, j) = c.feature->numeral ? slot.value : (category_of(slot) == c.category ? 1.0 : 0.0);
    }
  }
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  result.samples = samples.size();

  if (p > 0) {
    Eigen::Index varying = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if ((x.col(j).array() != x(0, j)).any()) ++varying;
    }
    if (varying == 0) {
      throw ConvergenceError("lime: degenerate design, all " + std::to_string(p) + " columns are constant over " +
                             std::to_string(n) + " samples (rank 0)");
    }
  }
  LassoFit fit;
  if (p > 0) {
    fit = lasso_cv(x, yv, options.folds, options.lambdas, options.lambda_ratio, rng);
  } else {
    fit.beta = Eigen::VectorXd::Zero(0);
    fit.intercept = n > 0 ? yv.mean() : 0.0;
  }
  result.intercept = fit.intercept;
  result.lambda = fit.lambda;
  const Eigen::VectorXd pred = (x * fit.beta).array() + fit.intercept;
  const double sst = n > 0 ? (yv.array() - yv.mean()).square().sum() : 0.0;
  const double sse = (pred - yv).squaredNorm();
  result.r2 = sst > 0.0 ? 1.0 - sse / sst : 1.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    const Column& c = columns[static_cast<std::size_t>(j)];
    LimeColumn col;
    col.variable = c.feature->variable;
    col.numeral = c.feature->numeral;
    if (!col.numeral) col.value = token_label(label, c.feature->family, c.category);
    col.beta = fit.beta(j);
    result.columns.push_back(std::move(col));
  }
  return result;
}

nlohmann::json LimeResult::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns) {
    nlohmann::json e{{"variable", c.variable}, {"beta", c.beta}};
    if (!c.numeral) e["value"] = c.value;
    cols.push_back(std::move(e));
  }
  return {{"columns", std::move(cols)}, {"original", original}, {"intercept", intercept},
          {"r2", r2},                   {"lambda", lambda},     {"samples", samples}};
}

LimeSummary summarize_lime(std::span<const LimeResult> results) {
  LimeSummary s;
  std::map<std::string, MeanAcc> importance;
  for (const auto& r : results) {
    std::map<std::string, MeanAcc> local;
    std::map<std::string, MeanAcc> contrast;
    for (const auto& c : r.columns) {
      local[c.variable].add(std::abs(c.beta));
      if (c.numeral) {
        s.numeral[c.variable].push_back(c.beta);
      } else {
        s.perturbed_value[c.variable + "=" + c.value].push_back(c.beta);
        contrast[c.variable].add(c.beta);
      }
    }
    for (const auto& [variable, acc] : local) importance[variable].add(acc.mean());
    for (const auto& [variable, own] : r.original) {
      auto it = contrast.find(variable);
      if (it != contrast.end()) s.original_value[variable + "=" + own].push_back(-it->second.mean());
    }
  }
  for (const auto& [k, acc] : importance) s.importance[k] = acc.mean();
  return s;
}

std::vector<std::pair<std::string, double>> LimeSummary::ranking() const { return sorted_desc(importance); }

nlohmann::json LimeSummary::to_json() const {
  auto describe = [](const std::map<std::string, std::vector<double>>& m) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [k, v] : m) {
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      out[k] = {{"count", v.size()}, {"mean", mean}, {"bowley_skewness", bowley_skewness(v)}, {"values", v}};
    }
    return out;
  };
  nlohmann::json ranked = nlohmann::json::array();
  for (const auto& [k, v] : ranking()) ranked.push_back({{"variable", k}, {"importance", v}});
  return {{"importance", importance},
          {"ranking", std::move(ranked)},
          {"numeral", describe(numeral)},
          {"original_value", describe(original_value)},
          {"perturbed_value", describe(perturbed_value)}};
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: lists differ in length");
  if (a.size() < 2) throw DataError("spearman needs at least two items");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) throw DataError("spearman is undefined for a constant list");
  return cov / std::sqrt(va * vb);
}

double bowley_skewness(std::vector<double> values) {
  if (values.empty()) throw DataError("bowley skewness of an empty list");
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double h = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  const double q1 = quantile(0.25), q2 = quantile(0.5), q3 = quantile(0.75);
  if (q3 == q1) return 0.0;
  return (q3 + q1 - 2.0 * q2) / (q3 - q1);
}

double ranking_agreement(std::span<const std::pair<std::string, double>> a,
                         std::span<const std::pair<std::string, double>> b, std::size_t* shared) {
  std::map<std::string, double> lookup(b.begin(), b.end());
  std::vector<double> va, vb;
  for (const auto& [k, v] : a) {
    auto it = lookup.find(k);
    if (it == lookup.end()) continue;
    va.push_back(v);
    vb.push_back(it->second);
  }
  if (shared) *shared = va.size();
  return spearman(va, vb);
}

}  // namespace boxoffice
