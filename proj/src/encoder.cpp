#include "boxoffice/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "boxoffice/error.hpp"
#include "boxoffice/random.hpp"

namespace boxoffice {

using nlohmann::json;

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr std::array<std::string_view, kFamilyCount> kFamilyNames = {
    "genre", "mpaa",  "franchise", "franchise_name", "copycat", "producer", "distributor",
    "year",  "month", "crew",      "actor",          "gender",  "age",      "keyword"};

Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, Mat& xhat, Eigen::VectorXd& rstd) {
  const auto d = static_cast<double>(x.cols());
  const Eigen::VectorXd mean = x.rowwise().mean();
  xhat = x.colwise() - mean;
  const Eigen::VectorXd var = xhat.array().square().rowwise().sum() / d;
  rstd = (var.array() + kLayerNormEps).rsqrt();
  xhat = rstd.asDiagonal() * xhat;
  Mat y = xhat * gamma.row(0).asDiagonal();
  y.rowwise() += beta.row(0);
  return y;
}

Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Eigen::VectorXd& rstd, const Mat& gamma,
                        Mat& d_gamma, Mat& d_beta) {
  d_gamma.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  d_beta.row(0) += dy.colwise().sum();
  const Mat dxhat = dy * gamma.row(0).asDiagonal();
  const Eigen::VectorXd mean_dxhat = dxhat.rowwise().mean();
  const Eigen::VectorXd mean_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().mean();
  Mat dx = dxhat;
  dx.colwise() -= mean_dxhat;
  dx -= mean_dxhat_xhat.asDiagonal() * xhat;
  return rstd.asDiagonal() * dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

Mat gelu(const Mat& u) {
  return u.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); });
}

Mat gelu_grad(const Mat& u) {
  return u.unaryExpr([](double x) {
    const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  });
}

void add_bias(Mat& x, const Mat& b) { x.rowwise() += b.row(0); }

Mat random_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = scale * standard_normal(rng);
  }
  return m;
}

template <typename Params, typename MatPtr>
std::vector<std::pair<std::string, MatPtr>> collect(Params& p) {
  std::vector<std::pair<std::string, MatPtr>> out;
  auto push = [&](std::string name, auto& m) {
    if (m.size() > 0) out.emplace_back(std::move(name), &m);
  };
  for (std::size_t f = 0; f < p.token_emb.size(); ++f) {
    push("token_emb." + std::string(kFamilyNames[f]), p.token_emb[f]);
  }
  push("field_emb", p.field_emb);
  for (std::size_t i = 0; i < p.numeral_w.size(); ++i) {
    push("numeral_w." + std::string(kNumeralFields[i]), p.numeral_w[i]);
    push("numeral_b." + std::string(kNumeralFields[i]), p.numeral_b[i]);
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    push(pre + "ln1_g", L.ln1_g);
    push(pre + "ln1_b", L.ln1_b);
    push(pre + "wq", L.wq);
    push(pre + "bq", L.bq);
    push(pre + "wk", L.wk);
    push(pre + "bk", L.bk);
    push(pre + "wv", L.wv);
    push(pre + "bv", L.bv);
    push(pre + "wo", L.wo);
    push(pre + "bo", L.bo);
    push(pre + "ln2_g", L.ln2_g);
    push(pre + "ln2_b", L.ln2_b);
    push(pre + "w1", L.w1);
    push(pre + "b1", L.b1);
    push(pre + "w2", L.w2);
    push(pre + "b2", L.b2);
  }
  push("final.g", p.final_g);
  push("final.b", p.final_b);
  push("object.w", p.object_w);
  push("object.b", p.object_b);
  for (std::size_t f = 0; f < p.mlm_w.size(); ++f) {
    push("mlm_w." + std::string(kFamilyNames[f]), p.mlm_w[f]);
    push("mlm_b." + std::string(kFamilyNames[f]), p.mlm_b[f]);
  }
  push("head.w", p.head_w);
  push("head.b", p.head_b);
  return out;
}

}  // namespace

std::string_view family_name(Family f) { return kFamilyNames[static_cast<std::size_t>(f)]; }

Family family_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kFamilyNames.size(); ++i) {
    if (kFamilyNames[i] == name) return static_cast<Family>(i);
  }
  throw ConfigError("unknown token family '" + std::string(name) + "'");
}

bool is_masked_family(Family f) {
  return std::find(kMaskedFamilies.begin(), kMaskedFamilies.end(), f) != kMaskedFamilies.end();
}

// ---------------------------------------------------------------------------

void EncoderConfig::validate() const {
  if (layers < 1) throw ConfigError("encoder: layers must be >= 1");
  if (d_model < 1 || heads < 1 || d_model % heads != 0) {
    throw ConfigError("encoder: d_model must be divisible by heads");
  }
  if (d_ff < 1) throw ConfigError("encoder: d_ff must be >= 1");
  if (prototypes < 2) throw ConfigError("encoder: prototypes must be >= 2");
  if (!(prototype_lo < prototype_hi)) throw ConfigError("encoder: prototype interval must have lo < hi");
  if (!(sigma > 0.0)) throw ConfigError("encoder: sigma must be > 0");
  if (max_genres < 1 || max_keywords < 1 || max_objects < 1) {
    throw ConfigError("encoder: slot limits must be >= 1");
  }
  if (object_width < 1) throw ConfigError("encoder: object_width must be >= 1");
  for (int v : vocab) {
    if (v < 0) throw ConfigError("encoder: vocabulary sizes must be >= 0");
  }
}

json EncoderConfig::to_json() const {
  json v = json::object();
  for (std::size_t f = 0; f < kFamilyCount; ++f) v[std::string(kFamilyNames[f])] = vocab[f];
  return {{"layers", layers},
          {"d_model", d_model},
          {"d_ff", d_ff},
          {"heads", heads},
          {"prototypes", prototypes},
          {"prototype_lo", prototype_lo},
          {"prototype_hi", prototype_hi},
          {"sigma", sigma},
          {"max_genres", max_genres},
          {"max_keywords", max_keywords},
          {"max_objects", max_objects},
          {"object_width", object_width},
          {"pooling", pooling == Pooling::cls ? "cls" : "mean"},
          {"vocab", v},
          {"init_scale", init_scale}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.layers = j.value("layers", c.layers);
  c.d_model = j.value("d_model", c.d_model);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.heads = j.value("heads", c.heads);
  c.prototypes = j.value("prototypes", c.prototypes);
  c.prototype_lo = j.value("prototype_lo", c.prototype_lo);
  c.prototype_hi = j.value("prototype_hi", c.prototype_hi);
  c.sigma = j.value("sigma", c.sigma);
  c.max_genres = j.value("max_genres", c.max_genres);
  c.max_keywords = j.value("max_keywords", c.max_keywords);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.object_width = j.value("object_width", c.object_width);
  const std::string pooling = j.value("pooling", std::string("cls"));
  if (pooling != "cls" && pooling != "mean") throw ConfigError("encoder: pooling must be cls or mean");
  c.pooling = pooling == "cls" ? Pooling::cls : Pooling::mean;
  if (j.contains("vocab")) {
    for (const auto& [name, size] : j.at("vocab").items()) {
      c.vocab[static_cast<std::size_t>(family_from_name(name))] = size.get<int>();
    }
  }
  c.init_scale = j.value("init_scale", c.init_scale);
  return c;
}

SequenceLayout::SequenceLayout(const EncoderConfig& config) {
  auto add = [&](std::string name, std::string variable, SlotKind kind, Family family = Family::genre,
                 std::size_t numeral = 0) {
    fields_.push_back({std::move(name), std::move(variable), kind, family, numeral});
  };
  add("cls", "CLS", SlotKind::cls);
  genre_begin_ = fields_.size();
  for (int g = 0; g < config.max_genres; ++g) add("genre_" + std::to_string(g), "Genre", SlotKind::token, Family::genre);
  add("mpaa", "MPAA", SlotKind::token, Family::mpaa);
  add("franchise", "Franchise", SlotKind::token, Family::franchise);
  add("franchise_name", "Franchise_name", SlotKind::token, Family::franchise_name);
  add("copycat", "Copycat", SlotKind::token, Family::copycat);
  add("producer", "Producer", SlotKind::token, Family::producer);
  add("distributor", "Distributor", SlotKind::token, Family::distributor);
  add("year", "Year", SlotKind::token, Family::year);
  add("month", "Month", SlotKind::token, Family::month);
  for (int i = 1; i <= 2; ++i) add("director_" + std::to_string(i), "Director" + std::to_string(i), SlotKind::token, Family::crew);
  for (int i = 1; i <= 2; ++i) add("writer_" + std::to_string(i), "Writer" + std::to_string(i), SlotKind::token, Family::crew);
  for (int i = 1; i <= 3; ++i) {
    const std::string n = std::to_string(i);
    add("actor_" + n, "Actor" + n, SlotKind::token, Family::actor);
    add("actor_" + n + "_gender", "Actor" + n + "_gender", SlotKind::token, Family::gender);
    add("actor_" + n + "_age", "Actor" + n + "_age", SlotKind::token, Family::age);
  }
  keyword_begin_ = fields_.size();
  for (int k = 0; k < config.max_keywords; ++k) add("keyword_" + std::to_string(k), "Keywords", SlotKind::token, Family::keyword);
  numeral_begin_ = fields_.size();
  for (std::size_t i = 0; i < kNumeralCount; ++i) {
    add(std::string(kNumeralFields[i]), std::string(kNumeralFields[i]), SlotKind::numeral, Family::genre, i);
  }
}

std::size_t SequenceLayout::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    if (fields_[i].name == name) return i;
  }
  throw ContractError("layout has no field '" + std::string(name) + "'");
}

Eigen::VectorXd prototype_grid(int prototypes, double lo, double hi) {
  return Eigen::VectorXd::LinSpaced(prototypes, lo, hi);
}

Eigen::VectorXd numeric_embed(double x, int prototypes, double lo, double hi, double sigma) {
  const Eigen::VectorXd q = prototype_grid(prototypes, lo, hi);
  const double s2 = sigma * sigma;
  return (-(q.array() - x).abs() / s2).exp().matrix();
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Mat*>> EncoderParams::named() { return collect<EncoderParams, Mat*>(*this); }

std::vector<std::pair<std::string, const Mat*>> EncoderParams::named() const {
  return collect<const EncoderParams, const Mat*>(*this);
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z = *this;
  z.set_zero();
  return z;
}

void EncoderParams::set_zero() {
  for (auto& [name, m] : named()) m->setZero();
}

void EncoderParams::add(const EncoderParams& other) {
  auto mine = named();
  const auto theirs = other.named();
  if (mine.size() != theirs.size()) throw ShapeError("EncoderParams::add: tensor lists differ");
  for (std::size_t i = 0; i < mine.size(); ++i) *mine[i].second += *theirs[i].second;
}

std::size_t EncoderParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : named()) n += static_cast<std::size_t>(m->size());
  return n;
}

// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config), layout_(config) {
  config_.validate();
  const Eigen::Index d = config_.d_model;
  const double s = config_.init_scale;
  Rng rng = substream(seed, "encoder.init");
  prototypes_ = prototype_grid(config_.prototypes, config_.prototype_lo, config_.prototype_hi);

  auto& p = params_;
  p.token_emb.resize(kFamilyCount);
  p.mlm_w.resize(kFamilyCount);
  p.mlm_b.resize(kFamilyCount);
  for (std::size_t f = 0; f < kFamilyCount; ++f) {
    p.token_emb[f] = random_matrix(config_.vocab[f] + 2, d, s, rng);
    if (is_masked_family(static_cast<Family>(f)) && config_.vocab[f] > 0) {
      p.mlm_w[f] = random_matrix(d, config_.vocab[f], s, rng);
      p.mlm_b[f] = Mat::Zero(1, config_.vocab[f]);
    }
  }
  p.field_emb = random_matrix(static_cast<Eigen::Index>(layout_.size()), d, s, rng);
  p.numeral_w.resize(kNumeralCount);
  p.numeral_b.resize(kNumeralCount);
  for (std::size_t i = 0; i < kNumeralCount; ++i) {
    p.numeral_w[i] = random_matrix(config_.prototypes, d, s, rng);
    p.numeral_b[i] = Mat::Zero(1, d);
  }
  p.layers.resize(static_cast<std::size_t>(config_.layers));
  for (auto& L : p.layers) {
    L.ln1_g = Mat::Ones(1, d);
    L.ln1_b = Mat::Zero(1, d);
    L.wq = random_matrix(d, d, s, rng);
    L.bq = Mat::Zero(1, d);
    L.wk = random_matrix(d, d, s, rng);
    L.bk = Mat::Zero(1, d);
    L.wv = random_matrix(d, d, s, rng);
    L.bv = Mat::Zero(1, d);
    L.wo = random_matrix(d, d, s, rng);
    L.bo = Mat::Zero(1, d);
    L.ln2_g = Mat::Ones(1, d);
    L.ln2_b = Mat::Zero(1, d);
    L.w1 = random_matrix(d, config_.d_ff, s, rng);
    L.b1 = Mat::Zero(1, config_.d_ff);
    L.w2 = random_matrix(config_.d_ff, d, s, rng);
    L.b2 = Mat::Zero(1, d);
  }
  p.final_g = Mat::Ones(1, d);
  p.final_b = Mat::Zero(1, d);
  p.object_w = random_matrix(config_.object_width, d, 1.0 / std::sqrt(static_cast<double>(config_.object_width)), rng);
  p.object_b = Mat::Zero(1, d);
}

void Encoder::init_head(double bias) {
  params_.head_w = Mat::Zero(config_.d_model, 1);
  params_.head_b = Mat::Constant(1, 1, bias);
}

int Encoder::embedding_row(Family f, int token) const {
  const int v = config_.vocab_size(f);
  if (token == kUnknownToken) return v;
  if (token == kMaskToken) return v + 1;
  if (token < 0 || token >= v) {
    throw ContractError("token " + std::to_string(token) + " outside the " + std::string(family_name(f)) +
                        " vocabulary of size " + std::to_string(v));
  }
  return token;
}

void Encoder::check_sequence(const InputSequence& seq) const {
  if (seq.slots.size() != layout_.size()) {
    throw ShapeError("sequence has " + std::to_string(seq.slots.size()) + " slots, layout expects " +
                     std::to_string(layout_.size()));
  }
  if (seq.slots[0].pad) throw ContractError("the [CLS] slot cannot be padding");
}

Mat Encoder::embed(const InputSequence& seq, const std::vector<Eigen::Index>& active) const {
  const auto m = static_cast<Eigen::Index>(active.size());
  Mat h(m, config_.d_model);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = static_cast<std::size_t>(active[static_cast<std::size_t>(r)]);
    const Slot& s = seq.slots[i];
    const FieldSpec& f = layout_.field(i);
    h.row(r) = params_.field_emb.row(static_cast<Eigen::Index>(i));
    if (f.kind == SlotKind::token) {
      h.row(r) += params_.token_emb[static_cast<std::size_t>(f.family)].row(embedding_row(f.family, s.token));
    } else if (f.kind == SlotKind::numeral) {
      if (!std::isfinite(s.value)) throw DataError("non-finite numeral in slot '" + f.name + "'");
      const Eigen::VectorXd ne =
          numeric_embed(s.value, config_.prototypes, config_.prototype_lo, config_.prototype_hi, config_.sigma);
      h.row(r) += ne.transpose() * params_.numeral_w[f.numeral] + params_.numeral_b[f.numeral].row(0);
    }
  }
  return h;
}

Mat Encoder::forward(const InputSequence& seq, ForwardCache* cache, std::vector<Mat>* attention) const {
  check_sequence(seq);
  const auto n = static_cast<Eigen::Index>(layout_.size());
  const int heads = config_.heads;
  const Eigen::Index hd = config_.d_model / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.active.clear();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!seq.slots[static_cast<std::size_t>(i)].pad) c.active.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(c.active.size());
  c.layers.assign(params_.layers.size(), {});

  Mat x = embed(seq, c.active);
  for (std::size_t l = 0; l < params_.layers.size(); ++l) {
    const LayerParams& L = params_.layers[l];
    auto& lc = c.layers[l];
    lc.x_in = x;
    lc.a = layer_norm(x, L.ln1_g, L.ln1_b, lc.ln1_xhat, lc.ln1_rstd);
    lc.q = lc.a * L.wq;
    add_bias(lc.q, L.bq);
    lc.k = lc.a * L.wk;
    add_bias(lc.k, L.bk);
    lc.v = lc.a * L.wv;
    add_bias(lc.v, L.bv);
    lc.o.resize(m, config_.d_model);
    lc.probs.resize(static_cast<std::size_t>(heads));
    Mat mean_probs;
    if (attention) mean_probs = Mat::Zero(m, m);
    for (int h = 0; h < heads; ++h) {
      Mat& p = lc.probs[static_cast<std::size_t>(h)];
      p.noalias() = lc.q.middleCols(h * hd, hd) * lc.k.middleCols(h * hd, hd).transpose();
      p *= scale;
      const Eigen::VectorXd row_max = p.rowwise().maxCoeff();
      p.colwise() -= row_max;
      p = p.array().exp().matrix();
      const Eigen::VectorXd row_sum = p.rowwise().sum();
      p = row_sum.cwiseInverse().asDiagonal() * p;
      lc.o.middleCols(h * hd, hd).noalias() = p * lc.v.middleCols(h * hd, hd);
      if (attention) mean_probs += p;
    }
    if (attention) {
      Mat full = Mat::Zero(n, n);
      for (Eigen::Index r = 0; r < m; ++r) {
        for (Eigen::Index s = 0; s < m; ++s) {
          full(c.active[static_cast<std::size_t>(r)], c.active[static_cast<std::size_t>(s)]) = mean_probs(r, s) / heads;
        }
      }
      attention->push_back(std::move(full));
    }
    lc.h1 = lc.x_in;
    lc.h1.noalias() += lc.o * L.wo;
    add_bias(lc.h1, L.bo);
    lc.c = layer_norm(lc.h1, L.ln2_g, L.ln2_b, lc.ln2_xhat, lc.ln2_rstd);
    lc.u = lc.c * L.w1;
    add_bias(lc.u, L.b1);
    lc.g = gelu(lc.u);
    x = lc.h1;
    x.noalias() += lc.g * L.w2;
    add_bias(x, L.b2);
  }
  c.x_final = x;
  const Mat y = layer_norm(x, params_.final_g, params_.final_b, c.final_xhat, c.final_rstd);
  Mat out = Mat::Zero(n, config_.d_model);
  for (Eigen::Index r = 0; r < m; ++r) out.row(c.active[static_cast<std::size_t>(r)]) = y.row(r);
  return out;
}

void Encoder::backward(const InputSequence& seq, const ForwardCache& c, const Mat& d_output, EncoderParams& grads,
                       std::vector<Mat>* attention_grads) const {
  const auto n = static_cast<Eigen::Index>(layout_.size());
  const auto m = static_cast<Eigen::Index>(c.active.size());
  const int heads = config_.heads;
  const Eigen::Index hd = config_.d_model / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  if (c.layers.size() != params_.layers.size()) throw ContractError("backward called without a forward cache");
  if (d_output.rows() != n || d_output.cols() != config_.d_model) throw ShapeError("backward: d_output shape");

  Mat dy(m, config_.d_model);
  for (Eigen::Index r = 0; r < m; ++r) dy.row(r) = d_output.row(c.active[static_cast<std::size_t>(r)]);
  Mat dx = layer_norm_backward(dy, c.final_xhat, c.final_rstd, params_.final_g, grads.final_g, grads.final_b);

  std::vector<Mat> compact_grads;
  if (attention_grads) compact_grads.assign(params_.layers.size(), Mat::Zero(m, m));

  for (std::size_t li = params_.layers.size(); li-- > 0;) {
    const LayerParams& L = params_.layers[li];
    LayerParams& G = grads.layers[li];
    const auto& lc = c.layers[li];

    // Feed-forward block.
    G.w2.noalias() += lc.g.transpose() * dx;
    G.b2.row(0) += dx.colwise().sum();
    Mat du(m, config_.d_ff);
    du.noalias() = dx * L.w2.transpose();
    du = du.cwiseProduct(gelu_grad(lc.u));
    G.w1.noalias() += lc.c.transpose() * du;
    G.b1.row(0) += du.colwise().sum();
    Mat dc(m, config_.d_model);
    dc.noalias() = du * L.w1.transpose();
    Mat dh1 = dx + layer_norm_backward(dc, lc.ln2_xhat, lc.ln2_rstd, L.ln2_g, G.ln2_g, G.ln2_b);

    // Attention block.
    G.wo.noalias() += lc.o.transpose() * dh1;
    G.bo.row(0) += dh1.colwise().sum();
    Mat d_o(m, config_.d_model);
    d_o.noalias() = dh1 * L.wo.transpose();
    Mat dq(m, config_.d_model), dk(m, config_.d_model), dv(m, config_.d_model);
    for (int h = 0; h < heads; ++h) {
      const Mat& p = lc.probs[static_cast<std::size_t>(h)];
      const auto doh = d_o.middleCols(h * hd, hd);
      Mat dp(m, m);
      dp.noalias() = doh * lc.v.middleCols(h * hd, hd).transpose();
      dv.middleCols(h * hd, hd).noalias() = p.transpose() * doh;
      if (attention_grads) compact_grads[li] += dp / heads;
      const Eigen::VectorXd row_dot = p.cwiseProduct(dp).rowwise().sum();
      dp.colwise() -= row_dot;
      const Mat ds = dp.cwiseProduct(p) * scale;
      dq.middleCols(h * hd, hd).noalias() = ds * lc.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd).noalias() = ds.transpose() * lc.q.middleCols(h * hd, hd);
    }
    G.wq.noalias() += lc.a.transpose() * dq;
    G.bq.row(0) += dq.colwise().sum();
    G.wk.noalias() += lc.a.transpose() * dk;
    G.bk.row(0) += dk.colwise().sum();
    G.wv.noalias() += lc.a.transpose() * dv;
    G.bv.row(0) += dv.colwise().sum();
    Mat da(m, config_.d_model);
    da.noalias() = dq * L.wq.transpose();
    da.noalias() += dk * L.wk.transpose();
    da.noalias() += dv * L.wv.transpose();
    dx = dh1 + layer_norm_backward(da, lc.ln1_xhat, lc.ln1_rstd, L.ln1_g, G.ln1_g, G.ln1_b);
  }

  if (attention_grads) {
    attention_grads->assign(params_.layers.size(), Mat::Zero(n, n));
    for (std::size_t li = 0; li < compact_grads.size(); ++li) {
      for (Eigen::Index r = 0; r < m; ++r) {
        for (Eigen::Index s = 0; s < m; ++s) {
          (*attention_grads)[li](c.active[static_cast<std::size_t>(r)], c.active[static_cast<std::size_t>(s)]) =
              compact_grads[li](r, s);
        }
      }
    }
  }

  // Embeddings.
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = static_cast<std::size_t>(c.active[static_cast<std::size_t>(r)]);
    const Slot& s = seq.slots[i];
    const FieldSpec& f = layout_.field(i);
    grads.field_emb.row(static_cast<Eigen::Index>(i)) += dx.row(r);
    if (f.kind == SlotKind::token) {
      grads.token_emb[static_cast<std::size_t>(f.family)].row(embedding_row(f.family, s.token)) += dx.row(r);
    } else if (f.kind == SlotKind::numeral) {
      const Eigen::VectorXd ne =
          numeric_embed(s.value, config_.prototypes, config_.prototype_lo, config_.prototype_hi, config_.sigma);
      grads.numeral_w[f.numeral].noalias() += ne * dx.row(r);
      grads.numeral_b[f.numeral].row(0) += dx.row(r);
    }
  }
}

RowVec Encoder::pool(const Mat& output, const InputSequence& seq) const {
  if (config_.pooling == Pooling::cls) return output.row(0);
  RowVec sum = RowVec::Zero(output.cols());
  int count = 0;
  for (std::size_t i = 0; i < seq.slots.size(); ++i) {
    if (seq.slots[i].pad) continue;
    sum += output.row(static_cast<Eigen::Index>(i));
    ++count;
  }
  return sum / count;
}

Mat Encoder::pool_backward(const RowVec& d_pooled, const InputSequence& seq) const {
  const auto n = static_cast<Eigen::Index>(layout_.size());
  Mat d = Mat::Zero(n, config_.d_model);
  if (config_.pooling == Pooling::cls) {
    d.row(0) = d_pooled;
    return d;
  }
  int count = 0;
  for (const auto& s : seq.slots) count += s.pad ? 0 : 1;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!seq.slots[static_cast<std::size_t>(i)].pad) d.row(i) = d_pooled / count;
  }
  return d;
}

double Encoder::predict_from_output(const Mat& output, const InputSequence& seq) const {
  if (!has_head()) throw NotFinetunedError("model has no regression head; run finetune first");
  return (pool(output, seq) * params_.head_w)(0, 0) + params_.head_b(0, 0);
}

double Encoder::predict(const InputSequence& seq) const {
  if (!has_head()) throw NotFinetunedError("model has no regression head; run finetune first");
  return predict_from_output(forward(seq), seq);
}

Mat Encoder::project_objects(const Mat& objects) const {
  if (objects.cols() != params_.object_w.rows()) {
    throw ShapeError("object width " + std::to_string(objects.cols()) + " != configured " +
                     std::to_string(params_.object_w.rows()));
  }
  Mat z = objects * params_.object_w;
  add_bias(z, params_.object_b);
  return z;
}

// ---------------------------------------------------------------------------

double huber_loss(double y, double y_hat) {
  const double r = std::abs(y - y_hat);
  return r < 1.0 ? 0.5 * r * r : r - 0.5;
}

double huber_grad(double y, double y_hat) {
  const double r = y_hat - y;
  if (std::abs(r) < 1.0) return r;
  return r > 0 ? 1.0 : -1.0;
}

namespace {

Eigen::VectorXd row_norms_checked(const Mat& m, const char* side) {
  const Eigen::VectorXd norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0)) {
      throw DataError(std::string("vg_similarity: zero-norm ") + side + " vector at row " + std::to_string(i));
    }
  }
  return norms;
}

}  // namespace

double vg_similarity(const Mat& x, const Mat& z) {
  if (x.rows() == 0 || z.rows() == 0) throw DataError("vg_similarity needs at least one vector on each side");
  if (x.cols() != z.cols()) throw ShapeError("vg_similarity: dimension mismatch");
  const Eigen::VectorXd nx = row_norms_checked(x, "keyword");
  const Eigen::VectorXd nz = row_norms_checked(z, "object");
  const Mat xn = nx.cwiseInverse().asDiagonal() * x;
  const Mat zn = nz.cwiseInverse().asDiagonal() * z;
  return (xn * zn.transpose()).array().exp().sum();
}

double vg_similarity_grad(const Mat& x, const Mat& z, Mat& dx, Mat& dz) {
  if (x.rows() == 0 || z.rows() == 0) throw DataError("vg_similarity needs at least one vector on each side");
  if (x.cols() != z.cols()) throw ShapeError("vg_similarity: dimension mismatch");
  const Eigen::VectorXd nx = row_norms_checked(x, "keyword");
  const Eigen::VectorXd nz = row_norms_checked(z, "object");
  const Mat xn = nx.cwiseInverse().asDiagonal() * x;
  const Mat zn = nz.cwiseInverse().asDiagonal() * z;
  const Mat e = (xn * zn.transpose()).array().exp().matrix();
  const Mat dxn = e * zn;
  const Mat dzn = e.transpose() * xn;
  // Through row normalization: d/dx (x/|x|) applied to g is (g - (g.xn) xn)/|x|.
  const Eigen::VectorXd gx = dxn.cwiseProduct(xn).rowwise().sum();
  const Eigen::VectorXd gz = dzn.cwiseProduct(zn).rowwise().sum();
  dx = nx.cwiseInverse().asDiagonal() * (dxn - gx.asDiagonal() * xn);
  dz = nz.cwiseInverse().asDiagonal() * (dzn - gz.asDiagonal() * zn);
  return e.sum();
}

}  // namespace boxoffice
