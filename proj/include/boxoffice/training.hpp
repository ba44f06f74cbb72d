#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxoffice/encoder.hpp"
#include "boxoffice/objective.hpp"
#include "boxoffice/pipeline.hpp"

namespace boxoffice {

enum class Stage { mlm, mlm_vg, finetune };
enum class FreezePolicy { none, backbone, embeddings };

std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);
std::string_view freeze_name(FreezePolicy f);
FreezePolicy parse_freeze(std::string_view name);

struct TrainConfig {
  Stage stage = Stage::mlm;
  int batch_size = 2048;
  double learning_rate = 3e-4;
  double weight_decay = 1e-4;
  int epochs = 50;
  int patience = 5;
  std::uint64_t seed = 0;
  int keyword_sample = 6;
  int object_sample = 20;
  FreezePolicy freeze = FreezePolicy::backbone;
  double masked_field_weight = 1.0;
  double grounding_weight = 1.0;
  std::size_t grounding_negatives = kDefaultVgNegatives;
  std::vector<double> grid_learning_rates = {1e-3, 3e-4, 1e-4};
  std::vector<int> grid_batch_sizes = {328, 512, 1024};
  int workers = 1;

  /// Stage defaults: mlm batch 2048, mlm_vg batch 326, finetune 30 epochs.
  static TrainConfig defaults(Stage stage);
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep the stage defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Adam with decoupled weight decay over a fixed list of tensors.
class AdamW {
 public:
  AdamW(double learning_rate, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<Mat* const> params, std::span<const Mat* const> grads);
  long steps() const { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

/// Sequences for `rows`: keyword slots hold a uniform sample (without
/// replacement, in original order) of min(K, available) keyword clusters and
/// objects a uniform sample of min(M, available). A null rng takes the first
/// K keywords and M objects.
Batch build_batch(std::span<const MovieExample> examples, std::span<const std::size_t> rows,
                  const SequenceLayout& layout, int keyword_sample, int object_sample, Rng* rng);

struct LossPoint {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
};

void write_loss_curve(const std::filesystem::path& path, std::span<const LossPoint> curve);

struct PretrainResult {
  std::vector<LossPoint> curve;
  int best_epoch = 0;
  double best_val = 0.0;
  double final_grounding = 0.0;  // grounding term on validation at the best epoch
  double final_masked_field = 0.0;
};

/// Optimizes the masked-field loss (plus grounding for mlm_vg) and leaves the
/// best-validation parameters in `encoder`.
PretrainResult pretrain(Encoder& encoder, std::span<const MovieExample> examples, const SplitRows& rows,
                        const TrainConfig& config);

struct GridPoint {
  double learning_rate = 0.0;
  int batch_size = 0;
  double val_huber = 0.0;
  int best_epoch = 0;
};

struct FinetuneResult {
  std::vector<LossPoint> curve;  // for the selected grid point
  std::vector<GridPoint> grid;
  GridPoint selected;
  double test_huber = 0.0;
};

/// Trains the regression head (and the unfrozen part of the backbone) for every
/// grid point, keeps the one with the lowest validation Huber and reports test
/// Huber once.
FinetuneResult finetune(Encoder& encoder, std::span<const MovieExample> examples, const SplitRows& rows,
                        const TrainConfig& config);

/// Pooled features of each row's evaluation sequence.
Mat pooled_features(const Encoder& encoder, std::span<const MovieExample> examples, std::span<const std::size_t> rows,
                    int keyword_sample, int workers = 1);

/// Predicted log10 revenue for each row.
std::vector<double> predict_rows(const Encoder& encoder, std::span<const MovieExample> examples,
                                 std::span<const std::size_t> rows, int keyword_sample, int workers = 1);

/// Whether a named tensor is updated under a freeze policy while finetuning.
bool trainable_in_finetune(const std::string& tensor, FreezePolicy policy);

}  // namespace boxoffice
