#include "fixtures.hpp"

#include <algorithm>
#include <cmath>

#include "boxoffice/error.hpp"

namespace fixture {

using namespace boxoffice;
namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "boxoffice_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

MovieRecord movie(const std::string& id, const std::string& date, double revenue, std::optional<double> budget,
                  std::vector<std::string> genres, std::vector<std::string> keywords) {
  MovieRecord m;
  m.id = id;
  m.title = "Movie " + id;
  const auto d = Date::parse(date);
  if (!d) throw DataError("bad fixture date " + date);
  m.release_date = *d;
  m.release_year = d->year;
  m.release_month = d->month;
  m.revenue_usd = revenue;
  m.budget_usd = budget;
  m.genres = std::move(genres);
  m.keywords = std::move(keywords);
  m.producer = "P";
  m.distributor = "D";
  return m;
}

EncoderConfig tiny_config(int vocab) {
  EncoderConfig c;
  c.layers = 2;
  c.d_model = 16;
  c.d_ff = 16;
  c.heads = 2;
  c.prototypes = 8;
  c.max_genres = 2;
  c.max_keywords = 3;
  c.max_objects = 3;
  c.object_width = 5;
  c.init_scale = 0.3;
  for (auto& v : c.vocab) v = vocab;
  return c;
}

EncoderConfig small_encoder_config() {
  EncoderConfig c;
  c.layers = 1;
  c.d_model = 16;
  c.d_ff = 16;
  c.heads = 2;
  c.prototypes = 8;
  c.max_keywords = 4;
  c.max_objects = 4;
  return c;
}

SmallPipeline small_pipeline(const SyntheticOptions& options, std::uint64_t split_seed) {
  SmallPipeline p;
  p.synthetic = make_synthetic_corpus(options);
  p.data = prepare_corpus(p.synthetic.corpus, p.synthetic.true_clusters, split_seed);
  EncoderConfig c = small_encoder_config();
  c.object_width = static_cast<int>(options.object_width);
  p.config = with_vocabulary(c, p.data.vocabulary);
  p.examples = make_examples(p.data, p.config, to_library(p.synthetic.posters));
  return p;
}

Batch random_batch(const Encoder& encoder, std::size_t size, int vocab, Rng& rng) {
  const SequenceLayout& layout = encoder.layout();
  Batch batch;
  for (std::size_t b = 0; b < size; ++b) {
    BatchItem item;
    item.id = "b" + std::to_string(b);
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const FieldSpec& f = layout.field(i);
      Slot s;
      if (f.kind == SlotKind::token) {
        s.token = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(vocab)));
        s.pad = i != layout.keyword_begin() && uniform_real(rng) < 0.2;
      } else if (f.kind == SlotKind::numeral) {
        s.value = 4.0 * uniform_real(rng) - 2.0;
      }
      item.sequence.slots.push_back(s);
    }
    item.objects = Mat(3, encoder.config().object_width);
    for (Eigen::Index k = 0; k < item.objects.size(); ++k) item.objects.data()[k] = standard_normal(rng);
    item.target = 3.0 * uniform_real(rng);
    batch.push_back(std::move(item));
  }
  return batch;
}

GradientReport check_gradients(Encoder& encoder, const Batch& batch, const MaskPlan* mask_plan, const VgPlan* vg_plan,
                               const ObjectiveWeights& weights, double h, double floor) {
  EncoderParams grads = encoder.params().zeros_like();
  evaluate_objective(encoder, batch, mask_plan, vg_plan, weights, &grads);
  auto params = encoder.params().named();
  const auto analytic = grads.named();
  GradientReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat& m = *params[t].second;
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      const double original = m.data()[k];
      m.data()[k] = original + h;
      const double up = evaluate_objective(encoder, batch, mask_plan, vg_plan, weights).total;
      m.data()[k] = original - h;
      const double down = evaluate_objective(encoder, batch, mask_plan, vg_plan, weights).total;
      m.data()[k] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t].second->data()[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_tensor = params[t].first;
      }
      ++report.checked;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kActiveVariables = {"Budget",    "MPAA",     "Director1_exp", "Month",
                                                   "Actor1_prof", "Producer", "Competitors",  "Copycat",
                                                   "Copycat_sim", "Writer1_exp"};

Mat direction(double a, double b, double c, double d) {
  Mat r(1, 4);
  r << a, b, c, d;
  return r;
}

}  // namespace

Transparent make_transparent(std::uint64_t seed, std::size_t train_size, std::size_t test_size) {
  EncoderConfig c;
  c.layers = 1;
  c.d_model = 4;
  c.d_ff = 4;
  c.heads = 1;
  c.prototypes = 2;
  c.prototype_lo = -1.0;
  c.prototype_hi = 1.0;
  c.sigma = 3.0;
  c.max_genres = 1;
  c.max_keywords = 1;
  c.max_objects = 1;
  c.object_width = 1;
  for (auto& v : c.vocab) v = static_cast<int>(kCategoryEffects.size());

  Transparent t;
  t.encoder = Encoder(c, seed);
  const SequenceLayout& layout = t.encoder.layout();
  EncoderParams& p = t.encoder.params();
  const Mat field = direction(1, -1, 1, -1);
  const Mat h = direction(1, 1, -1, -1);

  for (Eigen::Index r = 0; r < p.field_emb.rows(); ++r) p.field_emb.row(r) = kTransparentField * field;
  for (auto& m : p.token_emb) m.setZero();
  for (auto& m : p.numeral_w) m.setZero();
  for (auto& m : p.numeral_b) m.setZero();
  auto& L = p.layers.at(0);
  L.ln1_g.setOnes();
  L.ln1_b.setZero();
  L.ln2_g.setOnes();
  L.ln2_b.setZero();
  for (Mat* m : {&L.wq, &L.bq, &L.wk, &L.bk, &L.bv, &L.bo, &L.w1, &L.b1, &L.w2, &L.b2}) m->setZero();
  L.wv.setIdentity();
  L.wo.setIdentity();
  p.final_g.setOnes();
  p.final_b.setZero();

  // g(x) = gamma * (NE_hi(x) - NE_lo(x)) = gamma * 2 e^{-1/s2} sinh(x/s2) ~ x on [-1, 1].
  const double s2 = c.sigma * c.sigma;
  const double gamma = s2 / (2.0 * std::exp(-1.0 / s2));

  Rng rng = substream(seed, "transparent");
  std::vector<std::size_t> order(kActiveVariables.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::string& var = kActiveVariables[order[k]];
    const double magnitude = 0.05 * std::pow(1.6, static_cast<double>(k));
    const double sign = uniform_index(rng, 2) == 0 ? -1.0 : 1.0;
    t.scale[var] = magnitude;
    std::size_t slot = layout.size();
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (layout.field(i).variable == var) slot = i;
    }
    const FieldSpec& f = layout.field(slot);
    t.active_slots.push_back(slot);
    if (f.kind == SlotKind::numeral) {
      p.numeral_w[f.numeral].row(0) = -sign * magnitude * gamma * h;
      p.numeral_w[f.numeral].row(1) = sign * magnitude * gamma * h;
    } else {
      Mat& emb = p.token_emb[static_cast<std::size_t>(f.family)];
      for (std::size_t v = 0; v < kCategoryEffects.size(); ++v) {
        emb.row(static_cast<Eigen::Index>(v)) = sign * magnitude * kCategoryEffects[v] * h;
      }
    }
  }
  std::sort(t.active_slots.begin(), t.active_slots.end());

  const double n = static_cast<double>(t.active_slots.size() + 1);
  const double S = kTransparentField;
  p.head_w = (n * S * (S + 1.0) / 4.0) * h.transpose();
  p.head_b = Mat::Zero(1, 1);

  auto draw = [&]() {
    InputSequence seq;
    seq.slots.assign(layout.size(), Slot{0, 0.0, true});
    seq.slots[0].pad = false;
    for (std::size_t slot : t.active_slots) {
      Slot& s = seq.slots[slot];
      s.pad = false;
      if (layout.field(slot).kind == SlotKind::numeral) {
        s.value = 2.0 * uniform_real(rng) - 1.0;
      } else {
        s.token = static_cast<int>(uniform_index(rng, kCategoryEffects.size()));
      }
    }
    return seq;
  };
  for (std::size_t i = 0; i < train_size; ++i) t.train.push_back(draw());
  for (std::size_t i = 0; i < test_size; ++i) {
    t.test.push_back(draw());
    t.targets.push_back(t.encoder.predict(t.test.back()) + 0.5 * standard_normal(rng));
  }
  return t;
}

double transparent_linear(const Transparent& t, const InputSequence& seq) {
  const SequenceLayout& layout = t.encoder.layout();
  const EncoderParams& p = t.encoder.params();
  const double s2 = t.encoder.config().sigma * t.encoder.config().sigma;
  const double gamma = s2 / (2.0 * std::exp(-1.0 / s2));
  double y = 0.0;
  for (std::size_t slot : t.active_slots) {
    const FieldSpec& f = layout.field(slot);
    const Slot& s = seq.slots[slot];
    // Contributions are stored along h = (1, 1, -1, -1); its first entry reads them back.
    if (f.kind == SlotKind::numeral) {
      y += s.value * p.numeral_w[f.numeral](1, 0) / gamma;
    } else {
      y += p.token_emb[static_cast<std::size_t>(f.family)](s.token, 0);
    }
  }
  return y;
}

}  // namespace fixture
