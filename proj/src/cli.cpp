#include "boxoffice/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "boxoffice/checkpoint.hpp"
#include "boxoffice/copycat.hpp"
#include "boxoffice/dataset.hpp"
#include "boxoffice/error.hpp"
#include "boxoffice/evaluation.hpp"
#include "boxoffice/explain.hpp"
#include "boxoffice/keywords.hpp"
#include "boxoffice/parallel.hpp"
#include "boxoffice/pipeline.hpp"
#include "boxoffice/plot.hpp"
#include "boxoffice/posters.hpp"
#include "boxoffice/training.hpp"

namespace boxoffice {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string> kInputKeys = {"data", "lexical", "posters", "clusters", "checkpoint"};

enum class Kind { text, path, integer, real };

struct FlagSpec {
  std::string flag;
  std::string pointer;  // JSON pointer into the run config
  Kind kind;
  std::string help;
};

struct Subcommand {
  std::string name;
  std::string help;
  std::vector<FlagSpec> flags;
  json defaults;
};

const std::vector<Subcommand>& catalogue() {
  static const std::vector<Subcommand> subs = [] {
    const FlagSpec data{"--data", "/data", Kind::path, "movie dataset (JSONL)"};
    const FlagSpec clusters{"--clusters", "/clusters", Kind::path, "keyword clusters from `cluster`"};
    const FlagSpec posters{"--posters", "/posters", Kind::path, "poster feature manifest (JSONL)"};
    const FlagSpec checkpoint{"--checkpoint", "/checkpoint", Kind::path, "model checkpoint manifest"};
    const FlagSpec epochs{"--epochs", "/train/epochs", Kind::integer, "training epochs"};
    const FlagSpec batch{"--batch-size", "/train/batch_size", Kind::integer, "minibatch size"};
    const FlagSpec lr{"--learning-rate", "/train/learning_rate", Kind::real, "learning rate"};
    std::vector<Subcommand> s;
    s.push_back({"cluster",
                 "Cluster the keyword vocabulary",
                 {data,
                  {"--lexical", "/lexical", Kind::path, "word vectors, one `word v1 .. vD` per line"},
                  {"--k", "/k", Kind::integer, "number of clusters"},
                  {"--spectral-dim", "/spectral/dim", Kind::integer, "spectral embedding dimension"},
                  {"--knn", "/spectral/knn", Kind::integer, "neighbours in the keyword graph"}},
                 {{"k", 1414}, {"spectral", {{"dim", kSpectralDim}, {"knn", 15}, {"regularization", 1e-3}}}}});
    s.push_back({"copycat", "Find blockbusters and annotate copycats", {data, clusters}, json::object()});
    s.push_back({"pretrain",
                 "Self-supervised pretraining",
                 {data, clusters, posters, {"--stage", "/train/stage", Kind::text, "mlm or mlm_vg"}, epochs, batch, lr},
                 {{"train", {{"stage", "mlm"}}}, {"encoder", json::object()}}});
    s.push_back({"finetune",
                 "Train the regression head",
                 {data, clusters, posters, checkpoint, epochs,
                  {"--freeze", "/train/freeze", Kind::text, "none, backbone or embeddings"}},
                 {{"train", {{"stage", "finetune"}}}, {"encoder", json::object()}}});
    s.push_back({"eval",
                 "Test-split metrics of a finetuned model",
                 {data, clusters, posters, checkpoint,
                  {"--baseline-huber", "/baseline_huber", Kind::real, "reference loss for the relative change"}},
                 json::object()});
    s.push_back({"explain",
                 "Attention rollout and LIME explanations",
                 {data, clusters, posters, checkpoint,
                  {"--method", "/method", Kind::text, "rollout, lime or both"},
                  {"--samples", "/lime/samples", Kind::integer, "LIME perturbations per movie"},
                  {"--limit", "/limit", Kind::integer, "explain the first N test movies (0: all)"}},
                 {{"method", "both"}, {"limit", 0}, {"lime", {{"samples", 5000}, {"folds", 5}, {"lambdas", 50}}}}});
    s.push_back({"retrieve",
                 "Posters closest to a keyword",
                 {data, clusters, posters, checkpoint,
                  {"--keyword", "/keyword", Kind::text, "query keyword"},
                  {"--top-k", "/top_k", Kind::integer, "number of posters"}},
                 {{"top_k", 9}}});
    for (auto& sub : s) {
      sub.flags.insert(sub.flags.begin(), {{"--seed", "/seed", Kind::integer, "root seed"},
                                           {"--out", "/out", Kind::path, "output directory"}});
      sub.defaults["seed"] = 0;
      sub.defaults["out"] = "out/" + sub.name;
    }
    return s;
  }();
  return subs;
}

const Subcommand& find_subcommand(const std::string& name) {
  for (const auto& s : catalogue()) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown subcommand '" + name + "'");
}

void merge(json& base, const json& overlay) {
  for (const auto& [key, value] : overlay.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Settings from `--config`: a JSON object, or the `config` block of a run
/// manifest. Relative paths resolve against the file's directory.
json load_config_file(const fs::path& path, const std::string& subcommand) {
  json j = read_json_file(path);
  if (!j.is_object()) throw ConfigError(path.string() + ": configuration must be a JSON object");
  if (j.value("format", std::string()) == kManifestFormat) {
    const std::string recorded = j.value("subcommand", std::string());
    if (recorded != subcommand) {
      throw ConfigError("manifest '" + path.string() + "' records a `" + recorded + "` run, not `" + subcommand + "`");
    }
    j = j.at("config");
  }
  const fs::path base = fs::absolute(path).parent_path();
  for (const auto& key : kInputKeys) {
    if (j.contains(key) && j[key].is_string()) j[key] = (base / j[key].get<std::string>()).lexically_normal().string();
  }
  return j;
}

json flag_value(const FlagSpec& spec, const std::string& raw) {
  try {
    switch (spec.kind) {
      case Kind::text: return raw;
      case Kind::path: return fs::absolute(raw).lexically_normal().string();
      case Kind::integer: {
        std::size_t used = 0;
        const long long v = std::stoll(raw, &used);
        if (used != raw.size()) break;
        return v;
      }
      case Kind::real: {
        std::size_t used = 0;
        const double v = std::stod(raw, &used);
        if (used != raw.size()) break;
        return v;
      }
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError(spec.flag + ": '" + raw + "' is not a valid value");
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// ---------------------------------------------------------------------------

/// Bookkeeping for one invocation: inputs read, files written, metrics.
class Run {
 public:
  Run(RunConfig config, std::ostream& out) : config_(std::move(config)), out_(out), dir_(config_.out()) {
    fs::create_directories(dir_);
    workers_ = configured_workers();
  }

  const RunConfig& config() const { return config_; }
  const json& values() const { return config_.values; }
  std::uint64_t seed() const { return config_.seed(); }
  int workers() const { return workers_; }
  std::ostream& out() { return out_; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path require(const std::string& key) {
    auto p = config_.input(key);
    if (!p) throw ConfigError("`" + config_.subcommand + "` needs --" + key);
    return *p;
  }

  std::optional<fs::path> optional(const std::string& key) { return config_.input(key); }

  void write(const std::string& name, std::string_view contents) {
    write_file_atomic(path(name), contents);
    outputs_.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
  /// Records a file written by a library routine.
  void wrote(const std::string& name) { outputs_.push_back(name); }

  json& metrics() { return metrics_; }

  void finish() {
    json inputs = json::object();
    for (const auto& key : kInputKeys) {
      const auto p = config_.input(key);
      if (!p) continue;
      inputs[key] = {{"path", p->string()}, {"checksum", checksum_file(*p)}};
      if (key == "checkpoint") {
        fs::path blob = *p;
        blob.replace_extension(".bin");
        if (fs::exists(blob)) inputs["checkpoint_blob"] = {{"path", blob.string()}, {"checksum", checksum_file(blob)}};
      }
    }
    json outputs = json::object();
    for (const auto& name : outputs_) outputs[name] = checksum_file(path(name));
    const json manifest{{"format", kManifestFormat},
                        {"version", kVersion},
                        {"subcommand", config_.subcommand},
                        {"seed", seed()},
                        {"workers", workers_},
                        {"config", config_.values},
                        {"inputs", inputs},
                        {"outputs", outputs},
                        {"metrics", metrics_}};
    write_file_atomic(path("manifest.json"), manifest.dump(2) + "\n");
    spdlog::info("wrote {} files and manifest.json to {}", outputs_.size(), dir_.string());
  }

 private:
  RunConfig config_;
  std::ostream& out_;
  fs::path dir_;
  int workers_ = 1;
  std::vector<std::string> outputs_;
  json metrics_ = json::object();
};

void log_warnings(const std::vector<std::string>& warnings) {
  constexpr std::size_t shown = 20;
  for (std::size_t i = 0; i < warnings.size() && i < shown; ++i) spdlog::warn("{}", warnings[i]);
  if (warnings.size() > shown) spdlog::warn("... {} more warnings", warnings.size() - shown);
}

PosterLibrary load_posters(const std::optional<fs::path>& manifest) {
  if (!manifest) return {};
  PosterLibrary lib = load_poster_features(manifest->parent_path(), *manifest);
  spdlog::info("loaded poster features for {} movies", lib.size());
  return lib;
}

/// Prepared data, posters and a model: loaded from a checkpoint (reusing its
/// split) or freshly initialized from the seed.
struct Workspace {
  PreparedData data;
  PosterLibrary posters;
  Encoder encoder;
  json metadata = json::object();
  std::vector<MovieExample> examples;
  bool from_checkpoint = false;

  std::string label(Family f, int id) const {
    if (id >= 0 && id < data.vocabulary.size(f)) {
      const std::string& t = data.vocabulary.token(f, id);
      return f == Family::keyword ? "cluster " + t : t;
    }
    if (id == kUnknownToken) return "<unk>";
    return "#" + std::to_string(id);
  }
};

Workspace open_workspace(Run& run, bool checkpoint_required) {
  Workspace ws;
  Corpus corpus = load_dataset(run.require("data"));
  const ClusterModel clusters = ClusterModel::load(run.require("clusters"));
  spdlog::info("loaded {} movies and {} keyword clusters", corpus.size(), clusters.k);
  ws.posters = load_posters(run.optional("posters"));

  const auto ck_path = run.optional("checkpoint");
  if (!ck_path && checkpoint_required) {
    throw NotFinetunedError("`" + run.config().subcommand + "` needs a finetuned model (--checkpoint)");
  }
  if (ck_path) {
    Checkpoint ck = load_checkpoint(*ck_path);
    ws.metadata = ck.metadata;
    if (!ws.metadata.contains("split") || !ws.metadata.contains("vocabulary")) {
      throw SchemaError("checkpoint '" + ck_path->string() + "' lacks the split and vocabulary it was trained with");
    }
    ws.data = prepare_corpus(std::move(corpus), clusters, SplitSet::from_json(ws.metadata.at("split")));
    if (ws.data.vocabulary.to_json() != ws.metadata.at("vocabulary")) {
      throw ConflictError("the dataset or clusters differ from those the checkpoint was trained on");
    }
    ws.encoder = std::move(ck.encoder);
    ws.from_checkpoint = true;
    spdlog::info("loaded checkpoint {} (stage {})", ck_path->string(), ws.metadata.value("stage", "?"));
  } else {
    ws.data = prepare_corpus(std::move(corpus), clusters, run.seed());
    EncoderConfig config = with_vocabulary(EncoderConfig::from_json(run.config().block("encoder")), ws.data.vocabulary);
    if (!ws.posters.empty()) config.object_width = static_cast<int>(ws.posters.begin()->second.width);
    ws.encoder = Encoder(config, run.seed());
  }
  log_warnings(ws.data.warnings);
  ws.examples = make_examples(ws.data, ws.encoder.config(), ws.posters);
  spdlog::info("split: {} train, {} val, {} test", ws.data.rows.train.size(), ws.data.rows.val.size(),
               ws.data.rows.test.size());
  return ws;
}

json checkpoint_metadata(const Workspace& ws, const TrainConfig& tc, std::uint64_t seed) {
  return {{"stage", stage_name(tc.stage)},
          {"seed", seed},
          {"keyword_sample", tc.keyword_sample},
          {"split", ws.data.split.to_json()},
          {"vocabulary", ws.data.vocabulary.to_json()}};
}

TrainConfig train_config(const Run& run) {
  TrainConfig tc = TrainConfig::from_json(run.config().block("train"));
  tc.seed = run.seed();
  tc.workers = run.workers();
  tc.validate();
  return tc;
}

std::string loss_plot(const std::string& title, std::span<const LossPoint> curve) {
  std::map<std::string, PlotSeries> by_split;
  for (const auto& p : curve) {
    auto& s = by_split[p.split];
    s.name = p.split;
    s.x.push_back(p.epoch);
    s.y.push_back(p.loss);
  }
  std::vector<PlotSeries> series;
  for (auto& [name, s] : by_split) series.push_back(std::move(s));
  return svg_line_chart(title, "epoch", "loss", series);
}

void save_model(Run& run, const Workspace& ws, const TrainConfig& tc) {
  save_checkpoint(run.path("model.json"), ws.encoder, checkpoint_metadata(ws, tc, run.seed()));
  run.wrote("model.json");
  run.wrote("model.bin");
}

// ---------------------------------------------------------------------------

void cmd_cluster(Run& run) {
  const Corpus corpus = load_dataset(run.require("data"));
  const LexicalTable lexical = LexicalTable::load(run.require("lexical"));
  const json& sp = run.config().block("spectral");
  SpectralOptions opts;
  opts.dim = sp.value("dim", opts.dim);
  opts.knn = sp.value("knn", opts.knn);
  opts.regularization = sp.value("regularization", opts.regularization);
  const std::size_t k = run.values().at("k").get<std::size_t>();

  const TfIdf tfidf = build_tfidf(corpus);
  spdlog::info("{} movies, {} distinct keywords", corpus.size(), tfidf.vocabulary.size());
  const SpectralEmbedding spectral = spectral_embed(tfidf, opts);
  const KeywordVectors vectors = build_keyword_vectors(lexical, spectral);
  if (!vectors.oov.empty()) spdlog::warn("{} keywords have no lexical vector", vectors.oov.size());
  const ClusterModel model = cluster_keywords(vectors, k);
  model.save(run.path("clusters.json"));
  run.wrote("clusters.json");

  std::vector<std::size_t> sizes(model.k, 0);
  for (const auto& [word, c] : model.assignment) ++sizes[static_cast<std::size_t>(c)];
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  run.metrics() = {{"k", model.k},
                   {"keywords", model.vocabulary.size()},
                   {"oov", vectors.oov.size()},
                   {"max_residual", spectral.max_residual},
                   {"smallest_cluster", sizes.empty() ? 0 : *lo},
                   {"largest_cluster", sizes.empty() ? 0 : *hi}};
  run.write_json("cluster_summary.json", run.metrics());
  run.out() << fmt::format("{} keywords in {} clusters (sizes {}..{})\n", model.vocabulary.size(), model.k,
                           sizes.empty() ? 0 : *lo, sizes.empty() ? 0 : *hi);
}

void cmd_copycat(Run& run) {
  Corpus corpus = load_dataset(run.require("data"));
  const ClusterModel clusters = ClusterModel::load(run.require("clusters"));
  std::vector<std::size_t> all(corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  log_warnings(impute_budgets(corpus, all));
  const auto sets = map_movie_keywords(corpus, clusters);
  const auto blockbusters = find_blockbusters(corpus);
  const auto annotations = assign_copycats(corpus, sets, blockbusters);
  save_annotations(annotations, run.path("copycats.jsonl"));
  run.wrote("copycats.jsonl");

  const CopycatSummary summary = summarize_copycats(corpus, annotations, blockbusters.size());
  run.write_json("copycat_summary.json", summary.to_json());
  run.write("copycat_summary.txt", summary.to_table());
  run.out() << summary.to_table();
  std::size_t copycats = 0, overlap = 0;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    if (!annotations[i].is_copycat) continue;
    ++copycats;
    if (corpus[i].franchise) ++overlap;
  }
  run.metrics() = {{"movies", corpus.size()},
                   {"blockbusters", blockbusters.size()},
                   {"copycats", copycats},
                   {"franchise_copycats", overlap}};
}

void cmd_pretrain(Run& run) {
  Workspace ws = open_workspace(run, false);
  const TrainConfig tc = train_config(run);
  if (tc.stage == Stage::finetune) throw ConfigError("pretrain: stage must be mlm or mlm_vg");
  if (tc.stage == Stage::mlm_vg && ws.posters.empty()) throw ConfigError("mlm_vg pretraining needs --posters");
  if (ws.from_checkpoint) spdlog::info("continuing from the checkpoint's parameters");

  const PretrainResult r = pretrain(ws.encoder, ws.examples, ws.data.rows, tc);
  save_model(run, ws, tc);
  write_loss_curve(run.path("loss_curve.csv"), r.curve);
  run.wrote("loss_curve.csv");
  run.write("loss_curve.svg", loss_plot(fmt::format("{} pretraining", stage_name(tc.stage)), r.curve));

  run.metrics() = {{"best_epoch", r.best_epoch},
                   {"best_val", r.best_val},
                   {"val_masked_field", r.final_masked_field},
                   {"val_grounding", r.final_grounding}};
  run.write_json("pretrain.json", {{"train", tc.to_json()}, {"encoder", ws.encoder.config().to_json()}, {"result", run.metrics()}});
  run.out() << fmt::format("best epoch {}: validation loss {:.6f}\n", r.best_epoch, r.best_val);
}

void cmd_finetune(Run& run) {
  Workspace ws = open_workspace(run, false);
  const TrainConfig tc = train_config(run);
  if (tc.stage != Stage::finetune) throw ConfigError("finetune: stage must be finetune");
  if (!ws.from_checkpoint) spdlog::warn("no --checkpoint: finetuning a randomly initialized encoder");

  const FinetuneResult r = finetune(ws.encoder, ws.examples, ws.data.rows, tc);
  save_model(run, ws, tc);
  write_loss_curve(run.path("loss_curve.csv"), r.curve);
  run.wrote("loss_curve.csv");
  run.write("loss_curve.svg", loss_plot("finetuning", r.curve));

  json grid = json::array();
  for (const auto& g : r.grid) {
    grid.push_back({{"learning_rate", g.learning_rate}, {"batch_size", g.batch_size}, {"val_huber", g.val_huber},
                    {"best_epoch", g.best_epoch}});
  }
  run.metrics() = {{"test_huber", r.test_huber},
                   {"val_huber", r.selected.val_huber},
                   {"learning_rate", r.selected.learning_rate},
                   {"batch_size", r.selected.batch_size}};
  run.write_json("finetune.json", {{"train", tc.to_json()}, {"grid", grid}, {"result", run.metrics()}});
  run.out() << fmt::format("selected lr {} batch {}: validation Huber {:.6f}, test Huber {:.6f}\n",
                           r.selected.learning_rate, r.selected.batch_size, r.selected.val_huber, r.test_huber);
}

/// Sample-size ablation from the `ablation` block:
/// {"sizes": [...], "seeds": [...], "arms": [{"name", "pretrain": {...} | null, "finetune": {...}}]}.
/// Every run starts from a fresh encoder with the evaluated model's configuration.
void run_ablation(Run& run, const Workspace& ws) {
  const json& spec = run.values().at("ablation");
  const auto sizes = spec.at("sizes").get<std::vector<std::size_t>>();
  const auto seeds = spec.at("seeds").get<std::vector<std::uint64_t>>();
  if (sizes.size() < 2 || seeds.empty()) throw ConfigError("ablation needs at least two sizes and one seed");
  std::vector<AblationArm> arms;
  for (const auto& a : spec.at("arms")) {
    AblationArm arm;
    arm.name = a.at("name").get<std::string>();
    if (a.contains("pretrain") && !a["pretrain"].is_null()) {
      json p = a["pretrain"];
      if (!p.contains("stage")) p["stage"] = "mlm";
      arm.pretrain = TrainConfig::from_json(p);
      arm.pretrain->workers = run.workers();
      arm.pretrain->validate();
    }
    json f = a.value("finetune", json::object());
    f["stage"] = "finetune";
    arm.finetune = TrainConfig::from_json(f);
    arm.finetune.workers = run.workers();
    arm.finetune.validate();
    arms.push_back(std::move(arm));
  }
  if (arms.size() < 2) throw ConfigError("ablation needs at least two arms");

  const AblationTable table = ablation_curves(ws.examples, ws.data.rows, ws.encoder.config(), arms, sizes, seeds);
  run.write("ablation.csv", table.to_csv());
  run.write_json("ablation.json", table.to_json());
  std::map<std::string, PlotSeries> curves;
  for (const auto& c : table.cells()) {
    auto& s = curves[c.arm];
    s.name = c.arm;
    s.x.push_back(static_cast<double>(c.size));
    s.y.push_back(c.mean);
    s.error.push_back(c.stddev);
  }
  std::vector<PlotSeries> series;
  for (auto& [name, s] : curves) series.push_back(std::move(s));
  run.write("ablation.svg", svg_line_chart("Test Huber by training size", "training movies", "test Huber", series));
  run.metrics()["ablation"] = table.to_json().at("cells");
}

void cmd_eval(Run& run) {
  Workspace ws = open_workspace(run, true);
  const auto& test = ws.data.rows.test;
  const int k = ws.metadata.value("keyword_sample", TrainConfig{}.keyword_sample);
  const std::vector<double> pred = predict_rows(ws.encoder, ws.examples, test, k, run.workers());
  std::vector<double> target, revenue;
  std::string csv = "movie_id,target_log10,prediction_log10,revenue_usd\n";
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& ex = ws.examples[test[i]];
    target.push_back(ex.target);
    revenue.push_back(ex.revenue_usd);
    csv += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", ex.id, ex.target, pred[i], ex.revenue_usd);
  }
  std::optional<double> baseline;
  if (run.values().contains("baseline_huber") && !run.values()["baseline_huber"].is_null()) {
    baseline = run.values()["baseline_huber"].get<double>();
  }
  const MetricsReport report = make_report(pred, target, revenue, baseline);
  run.metrics() = report.to_json();
  run.write_json("metrics.json", run.metrics());
  run.write("metrics.txt", report.to_table());
  run.write("predictions.csv", csv);
  run.out() << report.to_table();
  if (run.values().contains("ablation")) run_ablation(run, ws);
}

void cmd_explain(Run& run) {
  const std::string method = run.values().value("method", std::string("both"));
  if (method != "rollout" && method != "lime" && method != "both") {
    throw ConfigError("explain: --method must be rollout, lime or both");
  }
  Workspace ws = open_workspace(run, true);
  if (!ws.encoder.has_head()) {
    throw NotFinetunedError("checkpoint has no regression head (stage " + ws.metadata.value("stage", std::string("?")) +
                            "); run finetune first");
  }
  const SequenceLayout& layout = ws.encoder.layout();
  std::vector<std::size_t> rows = ws.data.rows.test;
  const std::size_t limit = run.values().value("limit", std::size_t{0});
  if (limit > 0 && rows.size() > limit) rows.resize(limit);
  if (rows.empty()) throw DataError("explain: the test split is empty");
  std::vector<InputSequence> seqs;
  for (std::size_t r : rows) seqs.push_back(full_sequence(ws.examples[r], layout));
  const TokenLabel label = [&ws](Family f, int id) { return ws.label(f, id); };
  run.metrics()["examples"] = rows.size();

  std::optional<RolloutResult> rollout;
  if (method != "lime") {
    std::vector<Eigen::VectorXd> per(rows.size());
    parallel_chunks(rows.size(), run.workers(), [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) per[i] = attention_rollout(ws.encoder, seqs[i], ws.examples[rows[i]].target);
    });
    rollout = aggregate_rollout(std::move(per), seqs, layout, label);
    run.write_json("rollout.json", rollout->to_json());
    const auto ranking = rollout->ranking();
    run.write("rollout.svg", svg_bar_chart("Attention rollout: variable influence", ranking));
    std::vector<std::pair<std::string, double>> values(rollout->values_normalized.begin(),
                                                       rollout->values_normalized.end());
    std::stable_sort(values.begin(), values.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    run.write("rollout_values.svg", svg_bar_chart("Attention rollout: genre and month values", values));
    run.metrics()["rollout"] = rollout->variables_normalized;
    run.out() << "rollout ranking\n";
    for (const auto& [name, v] : ranking) run.out() << fmt::format("  {:<20} {:.4f}\n", name, v);
  }

  std::optional<LimeSummary> lime;
  if (method != "rollout") {
    std::vector<InputSequence> train;
    for (std::size_t r : ws.data.rows.train) train.push_back(full_sequence(ws.examples[r], layout));
    const LimeStats stats = LimeStats::fit(train, layout);
    const json& lj = run.config().block("lime");
    LimeOptions opts;
    opts.samples = lj.value("samples", opts.samples);
    opts.folds = lj.value("folds", opts.folds);
    opts.lambdas = lj.value("lambdas", opts.lambdas);
    opts.lambda_ratio = lj.value("lambda_ratio", opts.lambda_ratio);
    const Predictor predict = encoder_predictor(ws.encoder, run.workers());
    std::vector<LimeResult> results;
    json per = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& ex = ws.examples[rows[i]];
      Rng rng = substream(run.seed(), "explain.lime." + ex.id);
      results.push_back(lime_explain(predict, seqs[i], stats, opts, rng, label));
      json j = results.back().to_json();
      j["movie_id"] = ex.id;
      per.push_back(std::move(j));
      spdlog::debug("lime {}/{}: {} (r2 {:.3f})", i + 1, rows.size(), ex.id, results.back().r2);
    }
    lime = summarize_lime(results);
    run.write_json("lime.json", {{"summary", lime->to_json()}, {"examples", per}});
    const auto ranking = lime->ranking();
    run.write("lime.svg", svg_bar_chart("LIME: mean |coefficient| per variable", ranking));
    run.write("lime_values.svg", svg_strip_chart("LIME: effect of switching to a value", lime->perturbed_value));
    run.write("lime_numerals.svg", svg_strip_chart("LIME: numeral coefficients", lime->numeral));
    run.metrics()["lime"] = lime->importance;
    run.out() << "LIME ranking\n";
    for (const auto& [name, v] : ranking) run.out() << fmt::format("  {:<20} {:.4g}\n", name, v);
  }

  if (rollout && lime) {
    std::size_t shared = 0;
    const auto a = rollout->ranking();
    const auto b = lime->ranking();
    const double rho = ranking_agreement(a, b, &shared);
    run.metrics()["consistency"] = rho;
    run.write_json("consistency.json", {{"spearman", rho}, {"shared_variables", shared}});
    run.out() << fmt::format("rank agreement (Spearman over {} variables): {:.4f}\n", shared, rho);
  }
}

void cmd_retrieve(Run& run) {
  if (!run.values().contains("keyword")) throw ConfigError("retrieve needs --keyword");
  Workspace ws = open_workspace(run, false);
  if (!ws.from_checkpoint) throw ConfigError("retrieve needs a pretrained model (--checkpoint)");
  if (ws.posters.empty()) throw ConfigError("retrieve needs poster features (--posters)");
  const std::string keyword = run.values().at("keyword").get<std::string>();
  const ClusterModel clusters = ClusterModel::load(run.require("clusters"));
  const int cluster = clusters.cluster_of(keyword);
  const int token = ws.data.vocabulary.lookup(Family::keyword, std::to_string(cluster));
  const std::size_t top = run.values().value("top_k", std::size_t{9});
  const auto hits = retrieve_posters(ws.encoder, token, ws.examples, top);

  json list = json::array();
  run.out() << fmt::format("'{}' (cluster {})\n", keyword, cluster);
  for (const auto& h : hits) {
    list.push_back({{"movie_id", h.movie_id}, {"score", h.score}});
    run.out() << fmt::format("  {:<24} {:.6f}\n", h.movie_id, h.score);
  }
  run.write_json("retrieval.json", {{"keyword", keyword}, {"cluster", cluster}, {"hits", list}});
  run.metrics() = {{"cluster", cluster}, {"hits", list}};
}

void dispatch(Run& run) {
  const std::string& s = run.config().subcommand;
  if (s == "cluster") return cmd_cluster(run);
  if (s == "copycat") return cmd_copycat(run);
  if (s == "pretrain") return cmd_pretrain(run);
  if (s == "finetune") return cmd_finetune(run);
  if (s == "eval") return cmd_eval(run);
  if (s == "explain") return cmd_explain(run);
  if (s == "retrieve") return cmd_retrieve(run);
  throw ConfigError("unknown subcommand '" + s + "'");
}

void configure_logging(const std::string& level, std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("boxoffice", sink);
  logger->set_pattern("[%H:%M:%S] [%l] %v");
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") throw ConfigError("unknown log level '" + level + "'");
  logger->set_level(lvl);
  spdlog::set_default_logger(logger);
}

}  // namespace

// ---------------------------------------------------------------------------

std::uint64_t RunConfig::seed() const { return values.value("seed", std::uint64_t{0}); }

fs::path RunConfig::out() const { return values.value("out", std::string("out")); }

std::optional<fs::path> RunConfig::input(std::string_view key) const {
  const auto it = values.find(std::string(key));
  if (it == values.end() || it->is_null()) return std::nullopt;
  return fs::path(it->get<std::string>());
}

const json& RunConfig::block(std::string_view key) const {
  static const json empty = json::object();
  const auto it = values.find(std::string(key));
  return it == values.end() ? empty : *it;
}

void RunConfig::validate() const {
  for (const auto& key : kInputKeys) {
    const auto p = input(key);
    if (p && !fs::exists(*p)) throw IoError(key + " input '" + p->string() + "' does not exist");
  }
  const auto o = out();
  if (fs::exists(o) && !fs::is_directory(o)) throw IoError("output path '" + o.string() + "' is not a directory");
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& s : catalogue()) n.push_back(s.name);
    return n;
  }();
  return names;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Box-office revenue prediction from movie metadata and posters", "boxoffice"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  struct Bound {
    CLI::App* app;
    std::string config_path;
    std::string log_level = "info";
    std::vector<std::pair<const FlagSpec*, CLI::Option*>> options;
    std::map<std::string, std::string> raw;
  };
  std::vector<std::unique_ptr<Bound>> bound;
  for (const auto& sub : catalogue()) {
    auto b = std::make_unique<Bound>();
    b->app = app.add_subcommand(sub.name, sub.help);
    b->app->add_option("--config", b->config_path, "JSON settings or an earlier run's manifest.json");
    b->app->add_option("--log-level", b->log_level, "trace, debug, info, warn, error or off");
    for (const auto& f : sub.flags) {
      auto* opt = b->app->add_option(f.flag, b->raw[f.flag], f.help);
      b->options.emplace_back(&f, opt);
    }
    bound.push_back(std::move(b));
  }

  if (!args.empty() && !args[0].starts_with('-') &&
      std::find(subcommands().begin(), subcommands().end(), args[0]) == subcommands().end()) {
    err << app.help() << "error: usage: unknown subcommand '" << args[0] << "'\n";
    return 2;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << app.help() << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    const Bound* chosen = nullptr;
    for (const auto& b : bound) {
      if (b->app->parsed()) chosen = b.get();
    }
    const Subcommand& sub = find_subcommand(chosen->app->get_name());
    configure_logging(chosen->log_level, err);

    RunConfig config;
    config.subcommand = sub.name;
    config.values = sub.defaults;
    if (!chosen->config_path.empty()) merge(config.values, load_config_file(chosen->config_path, sub.name));
    for (const auto& [spec, opt] : chosen->options) {
      if (opt->count() == 0) continue;
      config.values[json::json_pointer(spec->pointer)] = flag_value(*spec, chosen->raw.at(spec->flag));
    }
    config.validate();
    spdlog::info("boxoffice {} {} (seed {})", kVersion, sub.name, config.seed());

    Run r(std::move(config), out);
    dispatch(r);
    r.finish();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.code() << ": " << one_line(e.what()) << '\n';
  } catch (const json::exception& e) {
    err << "error: config: " << one_line(e.what()) << '\n';
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << one_line(e.what()) << '\n';
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << '\n';
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace boxoffice
