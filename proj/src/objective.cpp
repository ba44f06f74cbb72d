#include "boxoffice/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <spdlog/spdlog.h>

#include "boxoffice/error.hpp"
#include "boxoffice/parallel.hpp"

namespace boxoffice {

MaskPlan make_mask_plan(const Batch& batch, const SequenceLayout& layout, Rng& rng) {
  MaskPlan plan;
  plan.items.resize(batch.size());
  std::vector<std::size_t> candidates;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& slots = batch[b].sequence.slots;
    for (Family family : kMaskedFamilies) {
      candidates.clear();
      for (std::size_t i = 0; i < layout.size(); ++i) {
        const FieldSpec& f = layout.field(i);
        if (f.kind != SlotKind::token || f.family != family) continue;
        if (slots[i].pad || slots[i].token < 0) continue;
        candidates.push_back(i);
      }
      if (candidates.empty()) continue;
      const std::size_t pick = candidates[uniform_index(rng, candidates.size())];
      plan.items[b].push_back({pick, family, slots[pick].token});
    }
  }
  return plan;
}

std::vector<InputSequence> apply_mask_plan(const Batch& batch, const SequenceLayout& layout, const MaskPlan& plan) {
  if (plan.items.size() != batch.size()) throw ContractError("mask plan does not match the batch size");
  std::vector<InputSequence> out;
  out.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    InputSequence seq = batch[b].sequence;
    for (const MaskedSlot& m : plan.items[b]) {
      if (m.slot >= layout.size()) throw ContractError("mask plan slot out of range");
      const FieldSpec& f = layout.field(m.slot);
      if (f.kind == SlotKind::cls) throw ContractError("mask plan touches the [CLS] slot");
      if (f.kind == SlotKind::numeral) throw ContractError("mask plan touches numeral slot '" + f.name + "'");
      if (!is_masked_family(f.family) || f.family != m.family) {
        throw ContractError("mask plan slot '" + f.name + "' is not in a masked family");
      }
      if (seq.slots[m.slot].pad) throw ContractError("mask plan touches padded slot '" + f.name + "'");
      seq.slots[m.slot].token = kMaskToken;
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<std::size_t> keyword_slots(const InputSequence& seq, const SequenceLayout& layout) {
  std::vector<std::size_t> out;
  for (std::size_t i = layout.keyword_begin(); i < layout.numeral_begin(); ++i) {
    if (!seq.slots[i].pad) out.push_back(i);
  }
  return out;
}

VgPlan make_vg_plan(const Batch& batch, const SequenceLayout& layout, std::size_t max_negatives, Rng& rng) {
  VgPlan plan;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const bool has_keywords = !keyword_slots(batch[b].sequence, layout).empty();
    const bool has_objects = batch[b].objects.rows() > 0;
    if (has_keywords && has_objects) {
      plan.positives.push_back(b);
    } else if (has_keywords) {
      spdlog::debug("movie '{}' has no poster objects; excluded from grounding", batch[b].id);
    }
  }
  const std::size_t p = plan.positives.size();
  const std::size_t total_pairs = p < 2 ? 0 : p * (p - 1);
  plan.negatives.resize(p);
  for (std::size_t pi = 0; pi < p; ++pi) {
    auto& negs = plan.negatives[pi];
    if (total_pairs <= max_negatives) {
      for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t c = 0; c < p; ++c) {
          if (a != c) negs.push_back({plan.positives[a], plan.positives[c]});
        }
      }
      continue;
    }
    while (negs.size() < max_negatives) {
      const std::size_t a = uniform_index(rng, p);
      std::size_t c = uniform_index(rng, p - 1);
      if (c >= a) ++c;
      const VgPair pair{plan.positives[a], plan.positives[c]};
      const bool seen = std::any_of(negs.begin(), negs.end(), [&](const VgPair& q) {
        return q.keywords == pair.keywords && q.objects == pair.objects;
      });
      if (!seen) negs.push_back(pair);
    }
  }
  return plan;
}

double vg_loss_from_similarities(std::span<const double> positive, std::span<const std::vector<double>> negatives) {
  if (positive.size() != negatives.size()) throw ShapeError("vg loss: positives and negatives differ in length");
  if (positive.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < positive.size(); ++i) {
    double denom = positive[i];
    for (double s : negatives[i]) denom += s;
    sum += -std::log(positive[i] / denom);
  }
  return sum / static_cast<double>(positive.size());
}

int configured_workers() {
  const char* env = std::getenv("BOXOFFICE_WORKERS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("BOXOFFICE_WORKERS must be a positive integer");
  return static_cast<int>(std::min<long>(v, 256));
}

namespace {

struct ItemTerms {
  double masked_field = 0.0;  // summed cross-entropy over the item's masked slots
  double regression = 0.0;
  std::array<std::size_t, kFamilyCount> correct{};
  std::array<std::size_t, kFamilyCount> count{};
};

Mat keyword_rows(const Mat& output, std::span<const std::size_t> slots) {
  Mat x(static_cast<Eigen::Index>(slots.size()), output.cols());
  for (std::size_t k = 0; k < slots.size(); ++k) x.row(static_cast<Eigen::Index>(k)) = output.row(static_cast<Eigen::Index>(slots[k]));
  return x;
}

}  // namespace

ObjectiveResult evaluate_objective(const Encoder& encoder, const Batch& batch, const MaskPlan* mask_plan,
                                   const VgPlan* vg_plan, const ObjectiveWeights& weights, EncoderParams* grads,
                                   int workers) {
  if (batch.empty()) throw ContractError("objective evaluated on an empty batch");
  const SequenceLayout& layout = encoder.layout();
  const EncoderParams& params = encoder.params();
  const bool use_mlm = weights.masked_field != 0.0 && mask_plan != nullptr;
  const bool use_vg = weights.grounding != 0.0 && vg_plan != nullptr && !vg_plan->positives.empty();
  const bool use_reg = weights.regression != 0.0;
  if (use_reg && !encoder.has_head()) throw NotFinetunedError("regression objective needs a finetuned head");

  std::vector<InputSequence> masked;
  if (use_mlm) masked = apply_mask_plan(batch, layout, *mask_plan);
  auto sequence = [&](std::size_t b) -> const InputSequence& {
    return use_mlm ? masked[b] : batch[b].sequence;
  };

  std::size_t masked_total = 0;
  if (use_mlm) {
    for (const auto& item : mask_plan->items) masked_total += item.size();
  }
  const double batch_size = static_cast<double>(batch.size());

  ObjectiveResult result;
  const std::size_t n_pos = use_vg ? vg_plan->positives.size() : 0;
  std::vector<Mat> vg_x(n_pos), vg_z(n_pos), vg_dx(n_pos), vg_dz(n_pos);
  std::vector<std::vector<std::size_t>> vg_slots(n_pos);
  std::vector<std::ptrdiff_t> positive_of(batch.size(), -1);
  for (std::size_t pi = 0; pi < n_pos; ++pi) {
    const std::size_t b = vg_plan->positives[pi];
    if (b >= batch.size()) throw ContractError("grounding plan refers to a missing batch item");
    positive_of[b] = static_cast<std::ptrdiff_t>(pi);
    vg_slots[pi] = keyword_slots(sequence(b), layout);
    if (vg_slots[pi].empty() || batch[b].objects.rows() == 0) {
      throw ContractError("grounding positive '" + batch[b].id + "' lacks keywords or objects");
    }
  }

  std::vector<ItemTerms> terms(batch.size());

  // Per-item heads (masked field, regression) on a computed output; returns
  // d(total)/d(output) contributions when `d_out` is given.
  auto item_heads = [&](std::size_t b, const Mat& out, Mat* d_out, EncoderParams* g) {
    ItemTerms& t = terms[b];
    if (use_mlm) {
      for (const MaskedSlot& m : mask_plan->items[b]) {
        const auto f = static_cast<std::size_t>(m.family);
        const Mat& w = params.mlm_w[f];
        const RowVec h = out.row(static_cast<Eigen::Index>(m.slot));
        RowVec logits = h * w + params.mlm_b[f].row(0);
        Eigen::Index arg = 0;
        const double mx = logits.maxCoeff(&arg);
        const RowVec e = (logits.array() - mx).exp().matrix();
        const double z = e.sum();
        t.masked_field += std::log(z) + mx - logits(m.original);
        t.correct[f] += arg == m.original ? 1 : 0;
        t.count[f] += 1;
        if (d_out) {
          RowVec dl = e / z;
          dl(m.original) -= 1.0;
          dl *= weights.masked_field / static_cast<double>(masked_total);
          g->mlm_w[f].noalias() += h.transpose() * dl;
          g->mlm_b[f].row(0) += dl;
          d_out->row(static_cast<Eigen::Index>(m.slot)).noalias() += dl * w.transpose();
        }
      }
    }
    if (use_reg) {
      const InputSequence& seq = sequence(b);
      const RowVec pooled = encoder.pool(out, seq);
      const double y_hat = (pooled * params.head_w)(0, 0) + params.head_b(0, 0);
      t.regression = huber_loss(batch[b].target, y_hat);
      if (d_out) {
        const double dy = huber_grad(batch[b].target, y_hat) * weights.regression / batch_size;
        g->head_w.noalias() += pooled.transpose() * dy;
        g->head_b(0, 0) += dy;
        *d_out += encoder.pool_backward(dy * params.head_w.transpose(), seq);
      }
    }
  };

  // Grounding loss from keyword outputs; fills vg_dx / vg_dz when `with_grad`.
  auto grounding = [&](bool with_grad) {
    for (std::size_t pi = 0; pi < n_pos; ++pi) {
      vg_z[pi] = encoder.project_objects(batch[vg_plan->positives[pi]].objects);
      if (with_grad) {
        vg_dx[pi] = Mat::Zero(vg_x[pi].rows(), vg_x[pi].cols());
        vg_dz[pi] = Mat::Zero(vg_z[pi].rows(), vg_z[pi].cols());
      }
    }
    double loss = 0.0;
    Mat dx, dz;
    for (std::size_t pi = 0; pi < n_pos; ++pi) {
      const auto& negs = vg_plan->negatives[pi];
      std::vector<double> s_neg(negs.size());
      const double s_pos = with_grad ? vg_similarity_grad(vg_x[pi], vg_z[pi], dx, dz) : vg_similarity(vg_x[pi], vg_z[pi]);
      Mat dx_pos = dx, dz_pos = dz;
      double denom = s_pos;
      std::vector<Mat> ndx(negs.size()), ndz(negs.size());
      for (std::size_t k = 0; k < negs.size(); ++k) {
        const auto a = positive_of[negs[k].keywords];
        const auto c = positive_of[negs[k].objects];
        if (a < 0 || c < 0 || a == c) throw ContractError("grounding negative pairs must be mismatched positives");
        const auto ua = static_cast<std::size_t>(a), uc = static_cast<std::size_t>(c);
        s_neg[k] = with_grad ? vg_similarity_grad(vg_x[ua], vg_z[uc], ndx[k], ndz[k]) : vg_similarity(vg_x[ua], vg_z[uc]);
        denom += s_neg[k];
      }
      loss += std::log(denom) - std::log(s_pos);
      if (with_grad) {
        const double scale = weights.grounding / static_cast<double>(n_pos);
        const double c_pos = (1.0 / denom - 1.0 / s_pos) * scale;
        const double c_neg = scale / denom;
        vg_dx[pi] += c_pos * dx_pos;
        vg_dz[pi] += c_pos * dz_pos;
        for (std::size_t k = 0; k < negs.size(); ++k) {
          const auto ua = static_cast<std::size_t>(positive_of[negs[k].keywords]);
          const auto uc = static_cast<std::size_t>(positive_of[negs[k].objects]);
          vg_dx[ua] += c_neg * ndx[k];
          vg_dz[uc] += c_neg * ndz[k];
        }
      }
    }
    return loss / static_cast<double>(n_pos);
  };

  if (!grads) {
    parallel_chunks(batch.size(), workers, [&](std::size_t, std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) {
        const Mat out = encoder.forward(sequence(b));
        item_heads(b, out, nullptr, nullptr);
        if (positive_of[b] >= 0) {
          const auto pi = static_cast<std::size_t>(positive_of[b]);
          vg_x[pi] = keyword_rows(out, vg_slots[pi]);
        }
      }
    });
    if (use_vg) result.grounding = grounding(false);
  } else {
    if (use_vg) {
      parallel_chunks(n_pos, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t pi = begin; pi < end; ++pi) {
          const Mat out = encoder.forward(sequence(vg_plan->positives[pi]));
          vg_x[pi] = keyword_rows(out, vg_slots[pi]);
        }
      });
      result.grounding = grounding(true);
      for (std::size_t pi = 0; pi < n_pos; ++pi) {
        const Mat& objects = batch[vg_plan->positives[pi]].objects;
        grads->object_w.noalias() += objects.transpose() * vg_dz[pi];
        grads->object_b.row(0) += vg_dz[pi].colwise().sum();
      }
    }
    const int w = std::max(1, std::min<int>(workers, static_cast<int>(batch.size())));
    std::vector<EncoderParams> worker_grads(w > 1 ? static_cast<std::size_t>(w) : 0);
    for (auto& g : worker_grads) g = grads->zeros_like();
    parallel_chunks(batch.size(), w, [&](std::size_t k, std::size_t begin, std::size_t end) {
      EncoderParams& g = w > 1 ? worker_grads[k] : *grads;
      ForwardCache cache;
      for (std::size_t b = begin; b < end; ++b) {
        const InputSequence& seq = sequence(b);
        const bool positive = positive_of[b] >= 0;
        const bool needs_output_grad = use_reg || positive || (use_mlm && !mask_plan->items[b].empty());
        const Mat out = encoder.forward(seq, needs_output_grad ? &cache : nullptr);
        Mat d_out = Mat::Zero(out.rows(), out.cols());
        item_heads(b, out, &d_out, &g);
        if (positive) {
          const auto pi = static_cast<std::size_t>(positive_of[b]);
          for (std::size_t r = 0; r < vg_slots[pi].size(); ++r) {
            d_out.row(static_cast<Eigen::Index>(vg_slots[pi][r])) += vg_dx[pi].row(static_cast<Eigen::Index>(r));
          }
        }
        if (needs_output_grad) encoder.backward(seq, cache, d_out, g);
      }
    });
    for (const auto& g : worker_grads) grads->add(g);
  }

  double mlm_sum = 0.0, reg_sum = 0.0;
  for (const ItemTerms& t : terms) {
    mlm_sum += t.masked_field;
    reg_sum += t.regression;
    for (std::size_t f = 0; f < kFamilyCount; ++f) {
      result.family_accuracy[f] += static_cast<double>(t.correct[f]);
      result.family_count[f] += t.count[f];
    }
  }
  for (std::size_t f = 0; f < kFamilyCount; ++f) {
    if (result.family_count[f] > 0) result.family_accuracy[f] /= static_cast<double>(result.family_count[f]);
  }
  result.masked_count = masked_total;
  result.masked_field = masked_total > 0 ? mlm_sum / static_cast<double>(masked_total) : 0.0;
  result.regression = use_reg ? reg_sum / batch_size : 0.0;
  result.grounding_positives = n_pos;
  result.total = weights.masked_field * result.masked_field + weights.grounding * result.grounding +
                 weights.regression * result.regression;
  return result;
}

}  // namespace boxoffice
