#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace boxoffice {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

// ---------------------------------------------------------------------------
// Token families and the fixed slot layout

enum class Family : int {
  genre,
  mpaa,
  franchise,
  franchise_name,
  copycat,
  producer,
  distributor,
  year,
  month,
  crew,  // directors and writers share one vocabulary
  actor,
  gender,
  age,
  keyword,
};
inline constexpr std::size_t kFamilyCount = 14;

std::string_view family_name(Family f);
Family family_from_name(std::string_view name);

/// Families predicted by the masked-field objective.
inline constexpr std::array<Family, 4> kMaskedFamilies = {Family::genre, Family::keyword, Family::crew,
                                                         Family::actor};
bool is_masked_family(Family f);

inline constexpr std::array<std::string_view, 19> kNumeralFields = {
    "Budget",        "Director1_exp", "Director1_prof", "Director2_exp",  "Director2_prof",
    "Writer1_exp",   "Writer1_prof",  "Writer2_exp",    "Writer2_prof",   "Actor1_exp",
    "Actor1_prof",   "Actor2_exp",    "Actor2_prof",    "Actor3_exp",     "Actor3_prof",
    "Competitors",   "Competitor_sim", "Copycat_sim",   "Copycat_rank"};
inline constexpr std::size_t kNumeralCount = kNumeralFields.size();

enum class SlotKind { cls, token, numeral };

struct FieldSpec {
  std::string name;      // unique per slot, e.g. "genre_2", "actor_1_gender"
  std::string variable;  // grouping used by explanations, e.g. "Genre", "Actor1_gender"
  SlotKind kind = SlotKind::token;
  Family family = Family::genre;
  std::size_t numeral = 0;  // index into kNumeralFields for numeral slots
};

/// Token ids >= 0 index a family vocabulary. Sentinels below map to the two
/// extra embedding rows every family carries.
inline constexpr int kUnknownToken = -1;
inline constexpr int kMaskToken = -3;

struct Slot {
  int token = 0;
  double value = 0.0;
  bool pad = false;
};

struct InputSequence {
  std::vector<Slot> slots;  // one per layout field
};

enum class Pooling { cls, mean };

struct EncoderConfig {
  int layers = 4;
  int d_model = 512;
  int d_ff = 512;
  int heads = 4;
  int prototypes = 64;
  double prototype_lo = -10.0;
  double prototype_hi = 10.0;
  double sigma = 0.5;
  int max_genres = 5;
  int max_keywords = 6;
  int max_objects = 20;
  int object_width = 2048 * 16;
  Pooling pooling = Pooling::cls;
  std::array<int, kFamilyCount> vocab{};  // real tokens per family
  double init_scale = 0.02;

  int vocab_size(Family f) const { return vocab[static_cast<std::size_t>(f)]; }
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

class SequenceLayout {
 public:
  explicit SequenceLayout(const EncoderConfig& config);

  std::size_t size() const { return fields_.size(); }
  const FieldSpec& field(std::size_t i) const { return fields_[i]; }
  const std::vector<FieldSpec>& fields() const { return fields_; }

  std::size_t genre_begin() const { return genre_begin_; }
  std::size_t keyword_begin() const { return keyword_begin_; }
  std::size_t numeral_begin() const { return numeral_begin_; }
  std::size_t index_of(std::string_view name) const;

 private:
  std::vector<FieldSpec> fields_;
  std::size_t genre_begin_ = 0;
  std::size_t keyword_begin_ = 0;
  std::size_t numeral_begin_ = 0;
};

/// Prototype numeral embedding: component i is exp(-|x - q_i| / sigma^2)
/// with q_i evenly spaced over [lo, hi].
Eigen::VectorXd numeric_embed(double x, int prototypes, double lo, double hi, double sigma);
Eigen::VectorXd prototype_grid(int prototypes, double lo, double hi);

// ---------------------------------------------------------------------------
// Parameters

struct LayerParams {
  Mat ln1_g, ln1_b;
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat ln2_g, ln2_b;
  Mat w1, b1, w2, b2;
};

struct EncoderParams {
  std::vector<Mat> token_emb;  // per family: (vocab + 2) x d
  Mat field_emb;               // layout size x d
  std::vector<Mat> numeral_w;  // per numeral field: prototypes x d
  std::vector<Mat> numeral_b;  // per numeral field: 1 x d
  std::vector<LayerParams> layers;
  Mat final_g, final_b;
  Mat object_w, object_b;      // F x d, 1 x d
  std::vector<Mat> mlm_w;      // per family (empty unless masked): d x vocab
  std::vector<Mat> mlm_b;
  Mat head_w, head_b;          // d x 1, 1 x 1; empty before finetuning

  /// Every tensor with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Mat*>> named();
  std::vector<std::pair<std::string, const Mat*>> named() const;

  /// Same shapes, all zeros.
  EncoderParams zeros_like() const;
  void set_zero();
  void add(const EncoderParams& other);
  std::size_t scalar_count() const;
};

// ---------------------------------------------------------------------------

/// Per-sequence forward state kept for the backward pass.
struct ForwardCache {
  struct Layer {
    Mat x_in, ln1_xhat, a, q, k, v, o, h1, ln2_xhat, c, u, g;
    Eigen::VectorXd ln1_rstd, ln2_rstd;
    std::vector<Mat> probs;  // per head, n x n
  };
  std::vector<Layer> layers;
  Mat x_final, final_xhat;
  Eigen::VectorXd final_rstd;
  /// Layout indices of the unpadded slots; layer tensors hold only these rows.
  std::vector<Eigen::Index> active;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  const SequenceLayout& layout() const { return layout_; }
  EncoderParams& params() { return params_; }
  const EncoderParams& params() const { return params_; }

  bool has_head() const { return params_.head_w.size() > 0; }
  /// Zero weights with the given bias.
  void init_head(double bias);

  /// Final-layer outputs, n x d_model (padded rows are zero). With
  /// `attention`, the head-averaged post-softmax matrix of every layer is
  /// appended, n x n with zero rows and columns at padded slots.
  Mat forward(const InputSequence& seq, ForwardCache* cache = nullptr,
              std::vector<Mat>* attention = nullptr) const;

  /// Accumulates parameter gradients for d(loss)/d(output). With
  /// `attention_grads`, the head-averaged d(loss)/d(attention) per layer is
  /// written (index = layer).
  void backward(const InputSequence& seq, const ForwardCache& cache, const Mat& d_output,
                EncoderParams& grads, std::vector<Mat>* attention_grads = nullptr) const;

  RowVec pool(const Mat& output, const InputSequence& seq) const;
  /// d(pooled) -> d(output).
  Mat pool_backward(const RowVec& d_pooled, const InputSequence& seq) const;

  /// Predicted log10 revenue; throws NotFinetunedError without a head.
  double predict(const InputSequence& seq) const;
  double predict_from_output(const Mat& output, const InputSequence& seq) const;

  /// M x F object features -> M x d_model.
  Mat project_objects(const Mat& objects) const;

  void check_sequence(const InputSequence& seq) const;

 private:
  Mat embed(const InputSequence& seq, const std::vector<Eigen::Index>& active) const;
  int embedding_row(Family f, int token) const;

  EncoderConfig config_;
  SequenceLayout layout_{EncoderConfig{}};
  EncoderParams params_;
  Eigen::VectorXd prototypes_;
};

// ---------------------------------------------------------------------------
// Scalar losses

/// 0.5 r^2 for |r| < 1, |r| - 0.5 otherwise, with r = y - y_hat.
double huber_loss(double y, double y_hat);
/// d huber / d y_hat.
double huber_grad(double y, double y_hat);

/// Sum over all (x, z) pairs of exp(cos(x, z)). Rows are vectors. Throws
/// DataError for an empty side or a zero-norm vector.
double vg_similarity(const Mat& x, const Mat& z);
/// Similarity plus its gradients with respect to x and z.
double vg_similarity_grad(const Mat& x, const Mat& z, Mat& dx, Mat& dz);

}  // namespace boxoffice
