#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "boxoffice/error.hpp"
#include "boxoffice/training.hpp"
#include "fixtures.hpp"

using namespace boxoffice;

namespace {

MovieExample bare_example(const SequenceLayout& layout, std::vector<int> keywords) {
  MovieExample ex;
  ex.id = "x";
  ex.base.slots.assign(layout.size(), Slot{0, 0.0, true});
  ex.base.slots[0].pad = false;
  ex.keywords = std::move(keywords);
  return ex;
}

std::vector<int> keyword_tokens(const BatchItem& item, const SequenceLayout& layout) {
  std::vector<int> out;
  for (std::size_t s : keyword_slots(item.sequence, layout)) out.push_back(item.sequence.slots[s].token);
  return out;
}

SyntheticOptions small_options(std::uint64_t seed) {
  SyntheticOptions o;
  o.movies = 120;
  o.seed = seed;
  o.object_width = 8;
  o.lexical_dim = 8;
  return o;
}

TrainConfig quick(Stage stage, int epochs, double lr) {
  TrainConfig c = TrainConfig::defaults(stage);
  c.batch_size = 16;
  c.epochs = epochs;
  c.patience = epochs;
  c.learning_rate = lr;
  c.seed = 3;
  c.keyword_sample = 4;
  c.object_sample = 4;
  c.grid_learning_rates = {3e-3, 1e-3};
  c.grid_batch_sizes = {16};
  return c;
}

bool same_params(const Encoder& a, const Encoder& b, bool include_head) {
  std::map<std::string, const Mat*> y;
  for (const auto& [name, m] : b.params().named()) y[name] = m;
  for (const auto& [name, m] : a.params().named()) {
    if (!include_head && name.starts_with("head.")) continue;
    const auto it = y.find(name);
    if (it == y.end() || it->second->size() != m->size() || *it->second != *m) return false;
  }
  return true;
}

}  // namespace

TEST(BuildBatch, KeywordSampling) {
  auto config = fixture::tiny_config();
  config.max_keywords = 6;
  const SequenceLayout layout(config);
  const std::vector<MovieExample> examples = {bare_example(layout, {4, 1, 9}),
                                              bare_example(layout, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9})};
  Rng rng = substream(1, "batch");
  const std::vector<std::size_t> rows = {0, 1};
  const Batch b = build_batch(examples, rows, layout, 6, 20, &rng);
  EXPECT_EQ(keyword_tokens(b[0], layout), (std::vector<int>{4, 1, 9}));
  const auto sampled = keyword_tokens(b[1], layout);
  EXPECT_EQ(sampled.size(), 6u);
  EXPECT_EQ(std::set<int>(sampled.begin(), sampled.end()).size(), 6u);
  EXPECT_TRUE(std::is_sorted(sampled.begin(), sampled.end()));

  Rng r1 = substream(2, "batch"), r2 = substream(2, "batch");
  const Batch x = build_batch(examples, rows, layout, 6, 20, &r1);
  const Batch y = build_batch(examples, rows, layout, 6, 20, &r2);
  EXPECT_EQ(keyword_tokens(x[1], layout), keyword_tokens(y[1], layout));
  EXPECT_EQ(keyword_tokens(build_batch(examples, rows, layout, 6, 20, nullptr)[1], layout),
            (std::vector<int>{0, 1, 2, 3, 4, 5}));
  EXPECT_THROW(build_batch(examples, std::vector<std::size_t>{}, layout, 6, 20, &rng), DataError);
}

TEST(MaskPlan, OneSlotPerPresentFamily) {
  Encoder enc(fixture::tiny_config(), 1);
  Rng rng = substream(3, "mask");
  Batch batch = fixture::random_batch(enc, 2, 20, rng);
  const auto& layout = enc.layout();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout.field(i).kind != SlotKind::token) continue;
    batch[0].sequence.slots[i].pad = false;
    if (layout.field(i).family == Family::keyword) batch[1].sequence.slots[i].pad = true;
    if (layout.field(i).family != Family::keyword) batch[1].sequence.slots[i].pad = false;
  }
  const MaskPlan plan = make_mask_plan(batch, layout, rng);
  EXPECT_EQ(plan.items[0].size(), 4u);
  EXPECT_EQ(plan.items[1].size(), 3u);
  const auto masked = apply_mask_plan(batch, layout, plan);
  for (const auto& m : plan.items[0]) {
    EXPECT_EQ(masked[0].slots[m.slot].token, kMaskToken);
    EXPECT_EQ(m.original, batch[0].sequence.slots[m.slot].token);
  }
}

TEST(MaskPlan, UnknownTokensAreNotEligible) {
  Encoder enc(fixture::tiny_config(), 1);
  Rng rng = substream(4, "mask-unk");
  Batch batch = fixture::random_batch(enc, 1, 20, rng);
  const auto& layout = enc.layout();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout.field(i).kind == SlotKind::token && layout.field(i).family == Family::genre) {
      batch[0].sequence.slots[i].token = kUnknownToken;
    }
  }
  const MaskPlan plan = make_mask_plan(batch, layout, rng);
  for (const auto& m : plan.items[0]) EXPECT_NE(m.family, Family::genre);
}

TEST(MaskPlan, ContractViolationsAreRejected) {
  Encoder enc(fixture::tiny_config(), 1);
  Rng rng = substream(5, "mask-contract");
  const Batch batch = fixture::random_batch(enc, 1, 20, rng);
  const auto& layout = enc.layout();
  MaskPlan cls{{{MaskedSlot{0, Family::genre, 0}}}};
  EXPECT_THROW(apply_mask_plan(batch, layout, cls), ContractError);
  MaskPlan numeral{{{MaskedSlot{layout.numeral_begin(), Family::genre, 0}}}};
  EXPECT_THROW(apply_mask_plan(batch, layout, numeral), ContractError);
  const std::size_t mpaa = layout.index_of("mpaa");
  MaskPlan unmasked_family{{{MaskedSlot{mpaa, Family::mpaa, 0}}}};
  EXPECT_THROW(apply_mask_plan(batch, layout, unmasked_family), ContractError);
}

TEST(VgPlan, NegativesAreMismatchedPositives) {
  Encoder enc(fixture::tiny_config(), 1);
  Rng rng = substream(6, "vg");
  Batch batch = fixture::random_batch(enc, 6, 20, rng);
  batch[2].objects.resize(0, 5);
  const VgPlan plan = make_vg_plan(batch, enc.layout(), 15, rng);
  EXPECT_EQ(plan.positives, (std::vector<std::size_t>{0, 1, 3, 4, 5}));
  for (const auto& negs : plan.negatives) {
    EXPECT_EQ(negs.size(), 15u);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& p : negs) {
      EXPECT_NE(p.keywords, p.objects);
      EXPECT_NE(p.keywords, 2u);
      EXPECT_NE(p.objects, 2u);
      seen.insert({p.keywords, p.objects});
    }
    EXPECT_EQ(seen.size(), negs.size());
  }
  const Batch pair(batch.begin(), batch.begin() + 2);
  const VgPlan small = make_vg_plan(pair, enc.layout(), 15, rng);
  for (const auto& negs : small.negatives) EXPECT_EQ(negs.size(), 2u);
}

// ---------------------------------------------------------------------------

TEST(AdamW, ZeroLearningRateLeavesParametersUnchanged) {
  auto p = fixture::small_pipeline(small_options(1));
  Encoder enc(p.config, 1);
  const Encoder before = enc;
  pretrain(enc, p.examples, p.data.rows, quick(Stage::mlm, 1, 0.0));
  EXPECT_TRUE(same_params(before, enc, true));
}

TEST(Pretrain, TrainCrossEntropyDecreases) {
  auto p = fixture::small_pipeline(small_options(2));
  Encoder enc(p.config, 2);
  const auto result = pretrain(enc, p.examples, p.data.rows, quick(Stage::mlm, 3, 3e-3));
  std::vector<double> train;
  for (const auto& point : result.curve) {
    if (point.split == "train") train.push_back(point.loss);
  }
  ASSERT_EQ(train.size(), 3u);
  EXPECT_LT(train[1], train[0]);
  EXPECT_LT(train[2], train[1]);
}

TEST(Pretrain, GroundingWithoutPostersEqualsMaskedFieldOnly) {
  auto p = fixture::small_pipeline(small_options(3));
  for (auto& ex : p.examples) ex.objects.values.clear();
  Encoder a(p.config, 4), b(p.config, 4);
  pretrain(a, p.examples, p.data.rows, quick(Stage::mlm, 2, 3e-3));
  pretrain(b, p.examples, p.data.rows, quick(Stage::mlm_vg, 2, 3e-3));
  EXPECT_TRUE(same_params(a, b, true));
}

TEST(Pretrain, RejectsFinetuneStageAndEmptySplit) {
  auto p = fixture::small_pipeline(small_options(4));
  Encoder enc(p.config, 1);
  EXPECT_THROW(pretrain(enc, p.examples, p.data.rows, quick(Stage::finetune, 1, 1e-3)), ConfigError);
  SplitRows empty = p.data.rows;
  empty.train.clear();
  EXPECT_THROW(pretrain(enc, p.examples, empty, quick(Stage::mlm, 1, 1e-3)), DataError);
}

TEST(Finetune, FrozenBackboneIsBitIdentical) {
  auto p = fixture::small_pipeline(small_options(5));
  Encoder enc(p.config, 5);
  const Encoder before = enc;
  TrainConfig c = quick(Stage::finetune, 2, 1e-3);
  c.freeze = FreezePolicy::backbone;
  finetune(enc, p.examples, p.data.rows, c);
  EXPECT_TRUE(enc.has_head());
  EXPECT_TRUE(same_params(before, enc, false));
}

TEST(Finetune, SelectsGridArgmin) {
  auto p = fixture::small_pipeline(small_options(6));
  Encoder enc(p.config, 6);
  TrainConfig c = quick(Stage::finetune, 2, 1e-3);
  c.grid_learning_rates = {1e-2, 1e-3, 0.0};
  c.grid_batch_sizes = {8, 16};
  const auto r = finetune(enc, p.examples, p.data.rows, c);
  ASSERT_EQ(r.grid.size(), 6u);
  const auto best = std::min_element(r.grid.begin(), r.grid.end(),
                                     [](const auto& a, const auto& b) { return a.val_huber < b.val_huber; });
  EXPECT_EQ(r.selected.learning_rate, best->learning_rate);
  EXPECT_EQ(r.selected.batch_size, best->batch_size);
  EXPECT_EQ(r.selected.val_huber, best->val_huber);
  // The reported test loss is that of the selected model.
  std::vector<double> targets;
  for (auto row : p.data.rows.test) targets.push_back(p.examples[row].target);
  const auto preds = predict_rows(enc, p.examples, p.data.rows.test, c.keyword_sample);
  double h = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) h += huber_loss(targets[i], preds[i]) / static_cast<double>(preds.size());
  EXPECT_NEAR(r.test_huber, h, 1e-12);
}

TEST(Finetune, FreezePoliciesCoverTensorsAsDocumented) {
  EXPECT_TRUE(trainable_in_finetune("head.w", FreezePolicy::backbone));
  EXPECT_FALSE(trainable_in_finetune("layer0.wq", FreezePolicy::backbone));
  EXPECT_TRUE(trainable_in_finetune("layer0.wq", FreezePolicy::embeddings));
  EXPECT_TRUE(trainable_in_finetune("layer0.wq", FreezePolicy::none));
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = quick(Stage::mlm_vg, 7, 1e-3);
  const auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(TrainConfig::defaults(Stage::mlm).batch_size, 2048);
  EXPECT_EQ(TrainConfig::defaults(Stage::mlm_vg).batch_size, 326);
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_stage("pretrain"), ConfigError);
}
