#include "boxoffice/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>

#include <spdlog/spdlog.h>

#include "boxoffice/error.hpp"
#include "boxoffice/parallel.hpp"

namespace boxoffice {

using nlohmann::json;

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::mlm: return "mlm";
    case Stage::mlm_vg: return "mlm_vg";
    case Stage::finetune: return "finetune";
  }
  return "mlm";
}

Stage parse_stage(std::string_view name) {
  if (name == "mlm") return Stage::mlm;
  if (name == "mlm_vg") return Stage::mlm_vg;
  if (name == "finetune") return Stage::finetune;
  throw ConfigError("unknown stage '" + std::string(name) + "' (expected mlm, mlm_vg or finetune)");
}

std::string_view freeze_name(FreezePolicy f) {
  switch (f) {
    case FreezePolicy::none: return "none";
    case FreezePolicy::backbone: return "backbone";
    case FreezePolicy::embeddings: return "embeddings";
  }
  return "backbone";
}

FreezePolicy parse_freeze(std::string_view name) {
  if (name == "none") return FreezePolicy::none;
  if (name == "backbone") return FreezePolicy::backbone;
  if (name == "embeddings") return FreezePolicy::embeddings;
  throw ConfigError("unknown freeze policy '" + std::string(name) + "' (expected none, backbone or embeddings)");
}

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::mlm:
      c.batch_size = 2048;
      c.epochs = 50;
      break;
    case Stage::mlm_vg:
      c.batch_size = 326;
      c.epochs = 50;
      break;
    case Stage::finetune:
      c.batch_size = 328;
      c.epochs = 30;
      break;
  }
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be finite and >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (keyword_sample < 0 || object_sample < 0) throw ConfigError("sample sizes must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (stage == Stage::finetune) {
    if (grid_learning_rates.empty() || grid_batch_sizes.empty()) throw ConfigError("finetune grid is empty");
    for (double lr : grid_learning_rates) {
      if (!(lr >= 0.0)) throw ConfigError("grid learning rates must be >= 0");
    }
    for (int b : grid_batch_sizes) {
      if (b < 2) throw ConfigError("grid batch sizes must be >= 2");
    }
  }
}

json TrainConfig::to_json() const {
  return {{"stage", stage_name(stage)},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"epochs", epochs},
          {"patience", patience},
          {"seed", seed},
          {"keyword_sample", keyword_sample},
          {"object_sample", object_sample},
          {"freeze", freeze_name(freeze)},
          {"masked_field_weight", masked_field_weight},
          {"grounding_weight", grounding_weight},
          {"grounding_negatives", grounding_negatives},
          {"grid_learning_rates", grid_learning_rates},
          {"grid_batch_sizes", grid_batch_sizes},
          {"workers", workers}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c = defaults(parse_stage(j.value("stage", std::string("mlm"))));
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epochs = j.value("epochs", c.epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.keyword_sample = j.value("keyword_sample", c.keyword_sample);
  c.object_sample = j.value("object_sample", c.object_sample);
  c.freeze = parse_freeze(j.value("freeze", std::string(freeze_name(c.freeze))));
  c.masked_field_weight = j.value("masked_field_weight", c.masked_field_weight);
  c.grounding_weight = j.value("grounding_weight", c.grounding_weight);
  c.grounding_negatives = j.value("grounding_negatives", c.grounding_negatives);
  c.grid_learning_rates = j.value("grid_learning_rates", c.grid_learning_rates);
  c.grid_batch_sizes = j.value("grid_batch_sizes", c.grid_batch_sizes);
  c.workers = j.value("workers", c.workers);
  return c;
}

// ---------------------------------------------------------------------------

AdamW::AdamW(double learning_rate, double weight_decay, double beta1, double beta2, double eps)
    : lr_(learning_rate), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamW::step(std::span<Mat* const> params, std::span<const Mat* const> grads) {
  if (params.size() != grads.size()) throw ShapeError("AdamW: parameter and gradient lists differ");
  if (m_.empty()) {
    for (const Mat* p : params) {
      m_.push_back(Mat::Zero(p->rows(), p->cols()));
      v_.push_back(Mat::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw ShapeError("AdamW: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& p = *params[i];
    const Mat& g = *grads[i];
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseAbs2();
    p.array() -= lr_ * ((m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_) + wd_ * p.array());
  }
}

// ---------------------------------------------------------------------------

Batch build_batch(std::span<const MovieExample> examples, std::span<const std::size_t> rows,
                  const SequenceLayout& layout, int keyword_sample, int object_sample, Rng* rng) {
  if (rows.empty()) throw DataError("cannot build a batch from an empty split");
  const std::size_t capacity = layout.numeral_begin() - layout.keyword_begin();
  const std::size_t k_max = std::min<std::size_t>(static_cast<std::size_t>(keyword_sample), capacity);
  const auto m_max = static_cast<std::size_t>(object_sample);

  auto choose = [&](std::size_t available, std::size_t limit) {
    std::vector<std::size_t> picked;
    if (available <= limit || rng == nullptr) {
      picked.resize(std::min(available, limit));
      std::iota(picked.begin(), picked.end(), std::size_t{0});
    } else {
      picked = sample_without_replacement(available, limit, *rng);
      std::sort(picked.begin(), picked.end());
    }
    return picked;
  };

  Batch batch;
  batch.reserve(rows.size());
  for (std::size_t r : rows) {
    const MovieExample& ex = examples[r];
    BatchItem item;
    item.id = ex.id;
    item.target = ex.target;
    item.sequence = ex.base;
    const auto kw = choose(ex.keywords.size(), k_max);
    for (std::size_t k = 0; k < kw.size(); ++k) {
      item.sequence.slots[layout.keyword_begin() + k] = Slot{ex.keywords[kw[k]], 0.0, false};
    }
    const auto obj = choose(ex.objects.count(), m_max);
    item.objects.resize(static_cast<Eigen::Index>(obj.size()), static_cast<Eigen::Index>(ex.objects.width));
    for (std::size_t o = 0; o < obj.size(); ++o) {
      const auto values = ex.objects.object(obj[o]);
      for (std::size_t f = 0; f < values.size(); ++f) {
        item.objects(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f)) = values[f];
      }
    }
    batch.push_back(std::move(item));
  }
  return batch;
}

void write_loss_curve(const std::filesystem::path& path, std::span<const LossPoint> curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss curve '" + path.string() + "'");
  out << "epoch,split,loss\n";
  out.precision(17);
  for (const auto& p : curve) out << p.epoch << ',' << p.split << ',' << p.loss << '\n';
}

namespace {

struct TensorList {
  std::vector<Mat*> params;
  std::vector<const Mat*> grads;
};

TensorList select_tensors(EncoderParams& params, const EncoderParams& grads,
                          const std::function<bool(const std::string&)>& keep) {
  TensorList out;
  auto p = params.named();
  const auto g = grads.named();
  if (p.size() != g.size()) throw ShapeError("gradient buffer does not match the parameters");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!keep(p[i].first)) continue;
    out.params.push_back(p[i].second);
    out.grads.push_back(g[i].second);
  }
  return out;
}

bool pretrain_tensor(const std::string& name) { return !name.starts_with("head."); }

struct SplitLoss {
  double total = 0.0;
  double masked_field = 0.0;
  double grounding = 0.0;
};

SplitLoss evaluate_split(const Encoder& encoder, std::span<const MovieExample> examples,
                         std::span<const std::size_t> rows, const TrainConfig& config, const ObjectiveWeights& weights) {
  SplitLoss loss;
  if (rows.empty()) return loss;
  Rng mask_rng = substream(config.seed, "pretrain.val.mask");
  Rng neg_rng = substream(config.seed, "pretrain.val.negatives");
  double n = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(config.batch_size)) {
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), rows.size() - start);
    const Batch batch = build_batch(examples, rows.subspan(start, count), encoder.layout(), config.keyword_sample,
                                    config.object_sample, nullptr);
    const MaskPlan mask = make_mask_plan(batch, encoder.layout(), mask_rng);
    const VgPlan vg = make_vg_plan(batch, encoder.layout(), config.grounding_negatives, neg_rng);
    const ObjectiveResult r = evaluate_objective(encoder, batch, &mask, &vg, weights, nullptr, config.workers);
    const auto w = static_cast<double>(count);
    loss.total += w * r.total;
    loss.masked_field += w * r.masked_field;
    loss.grounding += w * r.grounding;
    n += w;
  }
  loss.total /= n;
  loss.masked_field /= n;
  loss.grounding /= n;
  return loss;
}

double mean_huber(std::span<const double> predictions, std::span<const double> targets) {
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += huber_loss(targets[i], predictions[i]);
  return predictions.empty() ? 0.0 : s / static_cast<double>(predictions.size());
}

std::vector<double> targets_of(std::span<const MovieExample> examples, std::span<const std::size_t> rows) {
  std::vector<double> t;
  t.reserve(rows.size());
  for (std::size_t r : rows) t.push_back(examples[r].target);
  return t;
}

}  // namespace

PretrainResult pretrain(Encoder& encoder, std::span<const MovieExample> examples, const SplitRows& rows,
                        const TrainConfig& config) {
  config.validate();
  if (config.stage == Stage::finetune) throw ConfigError("pretrain needs stage mlm or mlm_vg");
  if (rows.train.empty()) throw DataError("pretraining needs a non-empty training split");
  const ObjectiveWeights weights{config.masked_field_weight,
                                 config.stage == Stage::mlm_vg ? config.grounding_weight : 0.0, 0.0};

  Rng order_rng = substream(config.seed, "pretrain.order");
  Rng sample_rng = substream(config.seed, "pretrain.sample");
  Rng mask_rng = substream(config.seed, "pretrain.mask");
  Rng neg_rng = substream(config.seed, "pretrain.negatives");

  EncoderParams grads = encoder.params().zeros_like();
  TensorList tensors = select_tensors(encoder.params(), grads, pretrain_tensor);
  AdamW optimizer(config.learning_rate, config.weight_decay);

  PretrainResult result;
  EncoderParams best = encoder.params();
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order = rows.train;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, order_rng);
    double train_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto count = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size() - start);
      const Batch batch = build_batch(examples, std::span(order).subspan(start, count), encoder.layout(),
                                      config.keyword_sample, config.object_sample, &sample_rng);
      const MaskPlan mask = make_mask_plan(batch, encoder.layout(), mask_rng);
      const VgPlan vg = weights.grounding != 0.0
                            ? make_vg_plan(batch, encoder.layout(), config.grounding_negatives, neg_rng)
                            : VgPlan{};
      grads.set_zero();
      const ObjectiveResult r = evaluate_objective(encoder, batch, &mask, &vg, weights, &grads, config.workers);
      if (!std::isfinite(r.total)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index) + " (first movie '" + batch.front().id + "')");
      }
      optimizer.step(tensors.params, tensors.grads);
      train_sum += r.total * static_cast<double>(count);
      ++batch_index;
    }
    const double train_loss = train_sum / static_cast<double>(order.size());
    result.curve.push_back({epoch, "train", train_loss});

    const SplitLoss val = rows.val.empty() ? SplitLoss{train_loss, 0.0, 0.0}
                                           : evaluate_split(encoder, examples, rows.val, config, weights);
    result.curve.push_back({epoch, "val", val.total});
    spdlog::info("pretrain[{}] epoch {} train {:.6f} val {:.6f}", stage_name(config.stage), epoch, train_loss,
                 val.total);
    if (!std::isfinite(val.total)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    if (val.total < best_val) {
      best_val = val.total;
      best = encoder.params();
      result.best_epoch = epoch;
      result.final_grounding = val.grounding;
      result.final_masked_field = val.masked_field;
    } else if (epoch - result.best_epoch >= config.patience) {
      spdlog::info("pretrain: early stop at epoch {} (best {})", epoch, result.best_epoch);
      break;
    }
  }
  encoder.params() = std::move(best);
  result.best_val = best_val;
  return result;
}

Mat pooled_features(const Encoder& encoder, std::span<const MovieExample> examples, std::span<const std::size_t> rows,
                    int keyword_sample, int workers) {
  Mat features(static_cast<Eigen::Index>(rows.size()), encoder.config().d_model);
  if (rows.empty()) return features;
  const Batch batch = build_batch(examples, rows, encoder.layout(), keyword_sample, 0, nullptr);
  parallel_chunks(batch.size(), workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      const Mat out = encoder.forward(batch[b].sequence);
      features.row(static_cast<Eigen::Index>(b)) = encoder.pool(out, batch[b].sequence);
    }
  });
  return features;
}

std::vector<double> predict_rows(const Encoder& encoder, std::span<const MovieExample> examples,
                                 std::span<const std::size_t> rows, int keyword_sample, int workers) {
  if (!encoder.has_head()) throw NotFinetunedError("model has no regression head; run finetune first");
  const Mat f = pooled_features(encoder, examples, rows, keyword_sample, workers);
  const Eigen::VectorXd p = (f * encoder.params().head_w).col(0).array() + encoder.params().head_b(0, 0);
  return {p.data(), p.data() + p.size()};
}

bool trainable_in_finetune(const std::string& name, FreezePolicy policy) {
  if (name.starts_with("head.")) return true;
  if (name.starts_with("mlm_") || name.starts_with("object.")) return false;
  switch (policy) {
    case FreezePolicy::backbone: return false;
    case FreezePolicy::none: return true;
    case FreezePolicy::embeddings:
      return !(name.starts_with("token_emb.") || name == "field_emb" || name.starts_with("numeral_"));
  }
  return false;
}

namespace {

struct GridRun {
  GridPoint point;
  std::vector<LossPoint> curve;
  Encoder model;
};

/// Head-only training on precomputed features.
GridRun finetune_head(const Encoder& base, const Mat& train_x, std::span<const double> train_y, const Mat& val_x,
                      std::span<const double> val_y, double lr, int batch_size, const TrainConfig& config,
                      std::size_t grid_index) {
  const double mean_y = std::accumulate(train_y.begin(), train_y.end(), 0.0) / static_cast<double>(train_y.size());
  Mat w = Mat::Zero(train_x.cols(), 1);
  Mat b = Mat::Constant(1, 1, mean_y);
  Mat gw = w, gb = b;
  AdamW optimizer(lr, config.weight_decay);
  Rng order_rng = substream(config.seed, "finetune.order." + std::to_string(grid_index));

  auto val_loss = [&] {
    if (val_x.rows() == 0) return 0.0;
    const Eigen::VectorXd p = (val_x * w).col(0).array() + b(0, 0);
    return mean_huber(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), val_y);
  };

  GridRun run{{lr, batch_size, std::numeric_limits<double>::infinity(), 0}, {}, base};
  Mat best_w = w, best_b = b;
  std::vector<std::size_t> order(static_cast<std::size_t>(train_x.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, order_rng);
    double train_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      const double n = static_cast<double>(end - start);
      gw.setZero();
      gb.setZero();
      for (std::size_t k = start; k < end; ++k) {
        const auto row = static_cast<Eigen::Index>(order[k]);
        const double pred = (train_x.row(row) * w)(0, 0) + b(0, 0);
        train_sum += huber_loss(train_y[order[k]], pred);
        const double d = huber_grad(train_y[order[k]], pred) / n;
        gw.noalias() += train_x.row(row).transpose() * d;
        gb(0, 0) += d;
      }
      Mat* params[] = {&w, &b};
      const Mat* grads[] = {&gw, &gb};
      optimizer.step(params, grads);
    }
    const double train_loss = train_sum / static_cast<double>(order.size());
    const double val = val_x.rows() == 0 ? train_loss : val_loss();
    run.curve.push_back({epoch, "train", train_loss});
    run.curve.push_back({epoch, "val", val});
    if (val < run.point.val_huber) {
      run.point.val_huber = val;
      run.point.best_epoch = epoch;
      best_w = w;
      best_b = b;
    } else if (epoch - run.point.best_epoch >= config.patience) {
      break;
    }
  }
  run.model.init_head(0.0);
  run.model.params().head_w = best_w;
  run.model.params().head_b = best_b;
  return run;
}

/// Training through the unfrozen part of the encoder.
GridRun finetune_full(const Encoder& base, std::span<const MovieExample> examples, const SplitRows& rows, double lr,
                      int batch_size, const TrainConfig& config, std::size_t grid_index) {
  const auto train_y = targets_of(examples, rows.train);
  const double mean_y = std::accumulate(train_y.begin(), train_y.end(), 0.0) / static_cast<double>(train_y.size());
  GridRun run{{lr, batch_size, std::numeric_limits<double>::infinity(), 0}, {}, base};
  Encoder& model = run.model;
  model.init_head(mean_y);
  EncoderParams grads = model.params().zeros_like();
  TensorList tensors = select_tensors(model.params(), grads,
                                      [&](const std::string& n) { return trainable_in_finetune(n, config.freeze); });
  AdamW optimizer(lr, config.weight_decay);
  Rng order_rng = substream(config.seed, "finetune.order." + std::to_string(grid_index));
  Rng sample_rng = substream(config.seed, "finetune.sample." + std::to_string(grid_index));
  const ObjectiveWeights weights{0.0, 0.0, 1.0};
  const auto val_y = targets_of(examples, rows.val);

  EncoderParams best = model.params();
  std::vector<std::size_t> order = rows.train;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, order_rng);
    double train_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
      const auto count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), order.size() - start);
      const Batch batch = build_batch(examples, std::span(order).subspan(start, count), model.layout(),
                                      config.keyword_sample, 0, &sample_rng);
      grads.set_zero();
      const ObjectiveResult r = evaluate_objective(model, batch, nullptr, nullptr, weights, &grads, config.workers);
      if (!std::isfinite(r.total)) {
        throw TrainingError("non-finite finetune loss at epoch " + std::to_string(epoch) + " (first movie '" +
                            batch.front().id + "')");
      }
      optimizer.step(tensors.params, tensors.grads);
      train_sum += r.total * static_cast<double>(count);
    }
    const double train_loss = train_sum / static_cast<double>(order.size());
    const double val =
        rows.val.empty() ? train_loss
                         : mean_huber(predict_rows(model, examples, rows.val, config.keyword_sample, config.workers), val_y);
    run.curve.push_back({epoch, "train", train_loss});
    run.curve.push_back({epoch, "val", val});
    if (val < run.point.val_huber) {
      run.point.val_huber = val;
      run.point.best_epoch = epoch;
      best = model.params();
    } else if (epoch - run.point.best_epoch >= config.patience) {
      break;
    }
  }
  model.params() = std::move(best);
  return run;
}

}  // namespace

FinetuneResult finetune(Encoder& encoder, std::span<const MovieExample> examples, const SplitRows& rows,
                        const TrainConfig& config) {
  config.validate();
  if (rows.train.empty()) throw DataError("finetuning needs a non-empty training split");

  Mat train_x, val_x;
  std::vector<double> train_y, val_y;
  if (config.freeze == FreezePolicy::backbone) {
    train_x = pooled_features(encoder, examples, rows.train, config.keyword_sample, config.workers);
    val_x = pooled_features(encoder, examples, rows.val, config.keyword_sample, config.workers);
    train_y = targets_of(examples, rows.train);
    val_y = targets_of(examples, rows.val);
  }

  FinetuneResult result;
  std::optional<GridRun> chosen;
  std::size_t index = 0;
  for (double lr : config.grid_learning_rates) {
    for (int bs : config.grid_batch_sizes) {
      GridRun run = config.freeze == FreezePolicy::backbone
                        ? finetune_head(encoder, train_x, train_y, val_x, val_y, lr, bs, config, index)
                        : finetune_full(encoder, examples, rows, lr, bs, config, index);
      spdlog::info("finetune grid lr={} batch={} val_huber={:.6f} (epoch {})", lr, bs, run.point.val_huber,
                   run.point.best_epoch);
      result.grid.push_back(run.point);
      if (std::isfinite(run.point.val_huber) && (!chosen || run.point.val_huber < chosen->point.val_huber)) {
        chosen = std::move(run);
      }
      ++index;
    }
  }
  if (!chosen) throw TrainingError("finetune grid produced no finite validation loss");
  result.selected = chosen->point;
  result.curve = std::move(chosen->curve);
  encoder = std::move(chosen->model);
  if (!rows.test.empty()) {
    result.test_huber = mean_huber(predict_rows(encoder, examples, rows.test, config.keyword_sample, config.workers),
                                   targets_of(examples, rows.test));
  }
  return result;
}

}  // namespace boxoffice
