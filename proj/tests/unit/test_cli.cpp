#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxoffice/cli.hpp"
#include "boxoffice/copycat.hpp"
#include "boxoffice/keywords.hpp"
#include "boxoffice/synthetic.hpp"
#include "fixtures.hpp"

using namespace boxoffice;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  int status = 0;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.push_back("--log-level");
  args.push_back("warn");
  std::ostringstream out, err;
  Outcome o;
  o.status = run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

/// A written synthetic corpus with its generating clusters and small model
/// settings for every training subcommand.
struct Workspace {
  fs::path dir;
  fs::path data, lexical, posters, clusters;
  fs::path pretrain_cfg, finetune_cfg, explain_cfg;
};

const Workspace& workspace() {
  static const Workspace w = [] {
    Workspace w;
    w.dir = fixture::scratch_dir("cli");
    SyntheticOptions o;
    o.movies = 120;
    o.seed = 9;
    o.object_width = 8;
    o.lexical_dim = 8;
    const SyntheticCorpus s = make_synthetic_corpus(o);
    write_synthetic_corpus(s, w.dir / "corpus");
    w.data = w.dir / "corpus" / "movies.jsonl";
    w.lexical = w.dir / "corpus" / "lexical.txt";
    w.posters = w.dir / "corpus" / "posters" / "manifest.jsonl";
    w.clusters = w.dir / "true_clusters.json";
    s.true_clusters.save(w.clusters);

    const json encoder = {{"layers", 1}, {"d_model", 16}, {"d_ff", 16}, {"heads", 2},
                          {"prototypes", 8}, {"max_keywords", 4}, {"max_objects", 4}};
    const json train = {{"batch_size", 16},     {"epochs", 2},         {"patience", 2},
                        {"learning_rate", 3e-3}, {"keyword_sample", 4}, {"object_sample", 4}};
    json ft = train;
    ft["grid_learning_rates"] = {3e-3};
    ft["grid_batch_sizes"] = {16};
    w.pretrain_cfg = w.dir / "pretrain.json";
    w.finetune_cfg = w.dir / "finetune.json";
    w.explain_cfg = w.dir / "explain.json";
    write_json(w.pretrain_cfg, {{"encoder", encoder}, {"train", train}});
    write_json(w.finetune_cfg, {{"encoder", encoder}, {"train", ft}});
    write_json(w.explain_cfg, {{"lime", {{"samples", 200}, {"folds", 3}, {"lambdas", 10}}}});
    return w;
  }();
  return w;
}

std::vector<std::string> inputs(const Workspace& w, bool with_posters = true) {
  std::vector<std::string> a = {"--data", w.data.string(), "--clusters", w.clusters.string()};
  if (with_posters) {
    a.push_back("--posters");
    a.push_back(w.posters.string());
  }
  return a;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(invoke({"frobnicate"}).status, 2);
  EXPECT_EQ(invoke({"cluster", "--no-such-flag", "1"}).status, 2);
  std::ostringstream out, err;
  EXPECT_EQ(run(std::vector<std::string>{}, out, err), 2);
}

TEST(Cli, VersionAndSubcommands) {
  std::ostringstream out, err;
  EXPECT_EQ(run(std::vector<std::string>{"--version"}, out, err), 0);
  EXPECT_NE(out.str().find(std::string(kVersion)), std::string::npos);
  EXPECT_EQ(subcommands().size(), 7u);
}

TEST(Cli, MissingInputIsIoError) {
  const auto o = invoke({"copycat", "--data", "/nonexistent/movies.jsonl", "--out",
                         (fixture::scratch_dir("cli_missing") / "o").string()});
  EXPECT_EQ(o.status, 1);
  EXPECT_EQ(o.err.rfind("error: io: ", 0), 0u) << o.err;
}

TEST(Cli, ClusterProducesRequestedK) {
  const auto& w = workspace();
  const fs::path out = fixture::scratch_dir("cli_cluster");
  const auto o = invoke({"cluster", "--data", w.data.string(), "--lexical", w.lexical.string(), "--k", "7",
                         "--spectral-dim", "4", "--knn", "5", "--out", out.string()});
  ASSERT_EQ(o.status, 0) << o.err;
  const ClusterModel m = ClusterModel::load(out / "clusters.json");
  EXPECT_EQ(m.k, 7u);
  const json manifest = read_json(out / "manifest.json");
  EXPECT_EQ(manifest.at("format"), std::string(kManifestFormat));
  EXPECT_TRUE(manifest.at("outputs").contains("clusters.json"));
  EXPECT_TRUE(manifest.at("inputs").contains("data"));
  EXPECT_EQ(manifest.at("metrics").at("k"), 7);
}

TEST(Cli, CopycatOnThreeMovies) {
  const fs::path dir = fixture::scratch_dir("cli_copycat");
  const Corpus c = {fixture::movie("bb", "2000-01-01", 2e8, 1e7, {"Drama"}, {"heist", "vault"}),
                    fixture::movie("cc", "2002-01-01", 1e6, 1e6, {"Drama"}, {"heist"}),
                    fixture::movie("zz", "2003-01-01", 1e6, 1e6, {"Drama"}, {"space"})};
  save_dataset(c, dir / "movies.jsonl");
  ClusterModel m;
  m.k = 2;
  m.assignment = {{"heist", 0}, {"vault", 0}, {"space", 1}};
  for (const auto& [k, v] : m.assignment) m.vocabulary.push_back(k);
  m.save(dir / "clusters.json");
  const auto o = invoke({"copycat", "--data", (dir / "movies.jsonl").string(), "--clusters",
                         (dir / "clusters.json").string(), "--out", (dir / "out").string()});
  ASSERT_EQ(o.status, 0) << o.err;
  EXPECT_EQ(line_count(dir / "out" / "copycats.jsonl"), 3u);
  const auto ann = load_annotations(dir / "out" / "copycats.jsonl");
  EXPECT_TRUE(ann[1].is_copycat);
  EXPECT_FALSE(ann[2].is_copycat);
  const json manifest = read_json(dir / "out" / "manifest.json");
  EXPECT_EQ(manifest.at("metrics").at("copycats"), 1);
}

TEST(Cli, ExplainNeedsFinetunedModel) {
  const auto& w = workspace();
  const fs::path out = fixture::scratch_dir("cli_explain_nohead");
  const auto o = invoke(concat({"explain"}, concat(inputs(w), {"--out", out.string()})));
  EXPECT_EQ(o.status, 1);
  EXPECT_EQ(o.err.rfind("error: not-finetuned: ", 0), 0u) << o.err;
  EXPECT_EQ(std::count(o.err.begin(), o.err.end(), '\n'), 1);

  const auto pre = invoke(concat({"pretrain", "--config", w.pretrain_cfg.string()},
                                 concat(inputs(w), {"--epochs", "1", "--out", (out / "pre").string()})));
  ASSERT_EQ(pre.status, 0) << pre.err;
  const auto o2 = invoke(concat({"explain"}, concat(inputs(w), {"--checkpoint", (out / "pre" / "model.json").string(),
                                                                "--out", (out / "x").string()})));
  EXPECT_EQ(o2.status, 1);
  EXPECT_EQ(o2.err.rfind("error: not-finetuned: ", 0), 0u) << o2.err;
}

TEST(Cli, FullPipelineAndManifestRerun) {
  const auto& w = workspace();
  const fs::path root = fixture::scratch_dir("cli_pipeline");
  const auto pre = invoke(concat({"pretrain", "--config", w.pretrain_cfg.string(), "--stage", "mlm_vg", "--seed", "4"},
                                 concat(inputs(w), {"--out", (root / "pre").string()})));
  ASSERT_EQ(pre.status, 0) << pre.err;
  EXPECT_TRUE(fs::exists(root / "pre" / "model.bin"));
  EXPECT_TRUE(fs::exists(root / "pre" / "loss_curve.csv"));

  const std::string ck = (root / "pre" / "model.json").string();
  const auto ft = invoke(concat({"finetune", "--config", w.finetune_cfg.string(), "--seed", "4"},
                                concat(inputs(w), {"--checkpoint", ck, "--out", (root / "ft").string()})));
  ASSERT_EQ(ft.status, 0) << ft.err;
  const json ft_manifest = read_json(root / "ft" / "manifest.json");
  const double test_huber = ft_manifest.at("metrics").at("test_huber").get<double>();
  EXPECT_TRUE(std::isfinite(test_huber));

  const std::string model = (root / "ft" / "model.json").string();
  const auto ev = invoke(concat({"eval"}, concat(inputs(w), {"--checkpoint", model, "--out", (root / "ev").string()})));
  ASSERT_EQ(ev.status, 0) << ev.err;
  EXPECT_NEAR(read_json(root / "ev" / "metrics.json").at("test_huber").get<double>(), test_huber, 1e-12);

  const auto ex = invoke(concat({"explain", "--config", w.explain_cfg.string(), "--limit", "3"},
                                concat(inputs(w), {"--checkpoint", model, "--out", (root / "ex").string()})));
  ASSERT_EQ(ex.status, 0) << ex.err;
  for (const char* f : {"rollout.json", "lime.json", "consistency.json", "rollout.svg", "lime.svg"}) {
    EXPECT_TRUE(fs::exists(root / "ex" / f)) << f;
  }

  const auto clusters = ClusterModel::load(w.clusters);
  const auto rt = invoke(concat({"retrieve", "--keyword", clusters.vocabulary.front(), "--top-k", "4"},
                                concat(inputs(w), {"--checkpoint", ck, "--out", (root / "rt").string()})));
  ASSERT_EQ(rt.status, 0) << rt.err;
  EXPECT_EQ(read_json(root / "rt" / "retrieval.json").at("hits").size(), 4u);

  // Rerunning from the recorded manifest reproduces the run exactly.
  const auto again = invoke({"finetune", "--config", (root / "ft" / "manifest.json").string(), "--out",
                             (root / "ft2").string()});
  ASSERT_EQ(again.status, 0) << again.err;
  const json m2 = read_json(root / "ft2" / "manifest.json");
  EXPECT_EQ(m2.at("metrics"), ft_manifest.at("metrics"));
  EXPECT_EQ(m2.at("outputs").at("model.bin"), ft_manifest.at("outputs").at("model.bin"));

  // A manifest from another subcommand is refused.
  const auto wrong = invoke({"eval", "--config", (root / "ft" / "manifest.json").string()});
  EXPECT_EQ(wrong.status, 1);
  EXPECT_EQ(wrong.err.rfind("error: config: ", 0), 0u) << wrong.err;
}
