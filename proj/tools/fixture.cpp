// Writes a synthetic corpus (movies.jsonl, lexical.txt, posters/) for demos
// and end-to-end tests. `--true-clusters` also writes the generating keyword
// clusters as clusters.json.

#include <iostream>

#include <CLI11.hpp>

#include "boxoffice/error.hpp"
#include "boxoffice/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic box-office corpus generator", "boxoffice_fixture"};
  std::string out = "fixture";
  std::string target = "affine";
  bool true_clusters = false;
  boxoffice::SyntheticOptions opts;
  app.add_option("--out", out, "output directory");
  app.add_option("--movies", opts.movies, "number of movies");
  app.add_option("--seed", opts.seed, "generator seed");
  app.add_option("--target", target, "affine (budget + genre) or theme (keyword theme)")
      ->check(CLI::IsMember({"affine", "theme"}));
  app.add_option("--themes", opts.themes, "keyword themes");
  app.add_option("--object-width", opts.object_width, "poster object feature width");
  app.add_option("--missing-budget-rate", opts.missing_budget_rate, "share of movies without a budget");
  app.add_option("--noise", opts.target_noise, "standard deviation of target noise");
  app.add_flag("--true-clusters", true_clusters, "also write the generating clusters");
  CLI11_PARSE(app, argc, argv);

  opts.target = target == "affine" ? boxoffice::SyntheticTarget::affine_budget_genre
                                   : boxoffice::SyntheticTarget::keyword_theme;
  try {
    const auto data = boxoffice::make_synthetic_corpus(opts);
    boxoffice::write_synthetic_corpus(data, out);
    if (true_clusters) data.true_clusters.save(std::filesystem::path(out) / "clusters.json");
    std::cout << "wrote " << data.corpus.size() << " movies to " << out << '\n';
  } catch (const boxoffice::Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
