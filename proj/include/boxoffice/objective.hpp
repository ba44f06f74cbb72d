#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "boxoffice/encoder.hpp"
#include "boxoffice/random.hpp"

namespace boxoffice {

/// One movie ready for the encoder: a full slot sequence plus its sampled
/// poster objects (M x F, possibly empty).
struct BatchItem {
  std::string id;
  InputSequence sequence;
  Mat objects;
  double target = 0.0;
};

using Batch = std::vector<BatchItem>;

struct MaskedSlot {
  std::size_t slot = 0;
  Family family = Family::genre;
  int original = 0;
};

/// Masked slots per batch item.
struct MaskPlan {
  std::vector<std::vector<MaskedSlot>> items;
};

/// Picks one present slot uniformly from each masked family of every item.
/// Slots holding unknown tokens are not eligible.
MaskPlan make_mask_plan(const Batch& batch, const SequenceLayout& layout, Rng& rng);

/// Copies of the item sequences with planned slots replaced by the mask token.
/// Throws ContractError when a plan touches [CLS], a numeral, a padded slot or
/// a family outside the masked set.
std::vector<InputSequence> apply_mask_plan(const Batch& batch, const SequenceLayout& layout, const MaskPlan& plan);

inline constexpr std::size_t kDefaultVgNegatives = 15;

struct VgPair {
  std::size_t keywords = 0;  // batch item providing the keyword outputs
  std::size_t objects = 0;   // batch item providing the objects
};

struct VgPlan {
  std::vector<std::size_t> positives;       // items with keywords and objects
  std::vector<std::vector<VgPair>> negatives;  // per positive, mismatched pairs
};

/// Keyword slots of a sequence that are not padding.
std::vector<std::size_t> keyword_slots(const InputSequence& seq, const SequenceLayout& layout);

/// Positives are the items with at least one keyword and one object. Each
/// gets up to `max_negatives` distinct pairs (i', j') with i' != j' drawn from
/// the positives; when fewer exist, all of them are used.
VgPlan make_vg_plan(const Batch& batch, const SequenceLayout& layout, std::size_t max_negatives, Rng& rng);

/// Mean over positives of -log(s_ii / (s_ii + sum of negative similarities)),
/// given a similarity lookup. Exposed for the closed-form checks.
double vg_loss_from_similarities(std::span<const double> positive, std::span<const std::vector<double>> negatives);

struct ObjectiveWeights {
  double masked_field = 1.0;
  double grounding = 1.0;
  double regression = 0.0;
};

struct ObjectiveResult {
  double total = 0.0;
  double masked_field = 0.0;
  double grounding = 0.0;
  double regression = 0.0;
  std::size_t masked_count = 0;
  std::size_t grounding_positives = 0;
  std::array<double, kFamilyCount> family_accuracy{};
  std::array<std::size_t, kFamilyCount> family_count{};
};

/// Evaluates the weighted objective on a batch. A term with weight 0 is not
/// computed. With `grads`, parameter gradients of `total` are accumulated into
/// it. `workers` > 1 splits sequences over threads; per-worker gradients are
/// summed in worker order.
ObjectiveResult evaluate_objective(const Encoder& encoder, const Batch& batch, const MaskPlan* mask_plan,
                                   const VgPlan* vg_plan, const ObjectiveWeights& weights,
                                   EncoderParams* grads = nullptr, int workers = 1);

/// Worker count from the BOXOFFICE_WORKERS environment variable (default 1).
int configured_workers();

}  // namespace boxoffice
