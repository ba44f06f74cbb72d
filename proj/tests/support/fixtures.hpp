#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "boxoffice/dataset.hpp"
#include "boxoffice/encoder.hpp"
#include "boxoffice/explain.hpp"
#include "boxoffice/objective.hpp"
#include "boxoffice/pipeline.hpp"
#include "boxoffice/synthetic.hpp"

namespace fixture {

/// An empty scratch directory unique to `name`.
std::filesystem::path scratch_dir(const std::string& name);

boxoffice::MovieRecord movie(const std::string& id, const std::string& date, double revenue,
                             std::optional<double> budget = {}, std::vector<std::string> genres = {"Drama"},
                             std::vector<std::string> keywords = {});

/// Synthetic corpus run through prepare_corpus with its generating clusters,
/// tokenized for a small encoder.
struct SmallPipeline {
  boxoffice::SyntheticCorpus synthetic;
  boxoffice::PreparedData data;
  boxoffice::EncoderConfig config;
  std::vector<boxoffice::MovieExample> examples;
};
SmallPipeline small_pipeline(const boxoffice::SyntheticOptions& options, std::uint64_t split_seed = 1);
/// L=1, d_model=16 encoder settings (vocabulary sizes left at zero).
boxoffice::EncoderConfig small_encoder_config();

/// A small random encoder configuration for gradient checks.
boxoffice::EncoderConfig tiny_config(int vocab = 20);

/// Random sequences (tokens below `vocab`, some padded) with random objects
/// and targets.
boxoffice::Batch random_batch(const boxoffice::Encoder& encoder, std::size_t size, int vocab, boxoffice::Rng& rng);

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over every
/// parameter, with central differences of step `h`.
struct GradientReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};
GradientReport check_gradients(boxoffice::Encoder& encoder, const boxoffice::Batch& batch,
                               const boxoffice::MaskPlan* mask_plan, const boxoffice::VgPlan* vg_plan,
                               const boxoffice::ObjectiveWeights& weights, double h = 1e-5, double floor = 1e-6);

/// One-layer encoder whose prediction is, to within (c/S)^2, the sum of
/// per-slot contributions c: uniform attention, identity value and output
/// maps, no feed-forward, a large shared field direction S*p and every
/// contribution along a direction h orthogonal to p. Numerals contribute
/// a * g(x) with g(x) ~ x; categoricals b * u[token].
struct Transparent {
  boxoffice::Encoder encoder;
  std::vector<boxoffice::InputSequence> train;
  std::vector<boxoffice::InputSequence> test;
  std::vector<double> targets;  // prediction plus noise, so residual signs vary
  std::map<std::string, double> scale;  // |a| or |b| per active variable
  std::vector<std::size_t> active_slots;
};

inline constexpr double kTransparentField = 1000.0;
inline const std::vector<double> kCategoryEffects = {-1.0, -0.5, 0.5, 1.0};

Transparent make_transparent(std::uint64_t seed, std::size_t train_size, std::size_t test_size);

/// Sum of slot contributions under the transparent parameters (exact linear
/// model, no layer normalization).
double transparent_linear(const Transparent& t, const boxoffice::InputSequence& seq);

}  // namespace fixture
