#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pairmine/corpus.hpp"
#include "pairmine/error.hpp"
#include "pairmine/features.hpp"

namespace pairmine {

using UnitVector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Raised by embed() for inputs that cannot be mapped to a unit vector.
class UnembeddableError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::uint32_t kDefaultDim = 256;

// Hashed bag-of-n-grams encoder: v = normalize(P * mean_rows(E, feats)).
struct BiencoderModel {
  std::uint32_t num_buckets = 0;
  std::uint32_t dim = 0;
  std::uint64_t rng_seed = 0;
  RowMatrix embedding;         // num_buckets x dim
  Eigen::MatrixXd projection;  // dim x dim

  // Embedding rows ~ N(0, 1/dim); projection = I + N(0, 0.01/dim).
  static BiencoderModel init(std::uint32_t num_buckets, std::uint32_t dim, std::uint64_t seed);
  bool all_finite() const;
};

// Logistic "looks like the seed set" classifier on top of the embedding.
struct PrefilterModel {
  Eigen::VectorXd weight;  // dim
  double bias = 0.0;

  static PrefilterModel zeros(std::uint32_t dim);
};

struct TrainConfig {
  double learning_rate = 1e-2;
  int steps = 500;
  int batch_size = 32;
  int n_random_negs = 4;
  double multitask_weight = 1.0;
  std::uint64_t rng_seed = 0;
};

struct EncoderShape {
  std::uint32_t num_buckets = kDefaultNumBuckets;
  std::uint32_t dim = kDefaultDim;
};

struct TrainInstance {
  HashedFeatures x;
  HashedFeatures y_pos;
  std::vector<HashedFeatures> y_negs;
};

// Gradient of a scalar loss w.r.t. every parameter block. Embedding gradients
// are sparse by row.
struct BiencoderGrad {
  std::map<std::uint32_t, Eigen::VectorXd> embedding_rows;
  Eigen::MatrixXd projection;
  Eigen::VectorXd prefilter_weight;
  double prefilter_bias = 0.0;

  static BiencoderGrad zeros(std::uint32_t dim);
  void add_row(std::uint32_t row, const Eigen::VectorXd& g);
  // Throws NumericError naming the first non-finite block.
  void check_finite() const;
};

UnitVector embed(const BiencoderModel& model, const HashedFeatures& feats);
std::vector<UnitVector> embed_all(const BiencoderModel& model,
                                  std::span<const HashedFeatures> feats);

// -log softmax(scores)[positive], computed stably.
double softmax_nll(std::span<const double> scores, std::size_t positive = 0);

struct LossAndGrad {
  double loss = 0.0;
  BiencoderGrad grad;
};

// loss = -log( e^{x.y+} / (e^{x.y+} + sum_j e^{x.y-_j}) ) with exact gradients
// through the mean pooling, projection and normalization.
LossAndGrad nll_loss_and_grad(const BiencoderModel& model, const TrainInstance& inst);

// Binary cross-entropy of the prefilter on one example, with gradients for the
// prefilter and the shared encoder.
LossAndGrad prefilter_loss_and_grad(const BiencoderModel& model, const PrefilterModel& pf,
                                    const HashedFeatures& feats, bool positive);

double prefilter(const PrefilterModel& model, const HashedFeatures& feats,
                 const BiencoderModel& bimodel);
double prefilter_from_vector(const PrefilterModel& model, const UnitVector& v);

// Nearest-rank q-quantile (q in [0,1]) of scores.
double percentile(std::vector<double> scores, double q);

// Indices of the ceil(retention * n) highest scores; ties keep the lower index.
// Returned in ascending index order.
std::vector<std::size_t> select_top_fraction(std::span<const double> scores, double retention);

struct SyntheticNegConfig {
  int per_type = 2;
  std::uint64_t rng_seed = 0;
};

struct SyntheticNegatives {
  std::vector<Record> records;
  std::size_t from_alt_spans = 0;
  std::size_t from_alt_passages = 0;
  std::size_t warnings = 0;
};

// Reading-comprehension negatives: (a) the gold passage with a different spotted
// span, (b) the gold answer paired with a different passage from the corpus.
SyntheticNegatives synthesize_negatives(const SeedExample& example, const SpotterConfig& spotter,
                                        const CorpusHandle& corpus,
                                        const SyntheticNegConfig& cfg = {});

struct StepLoss {
  double total = 0.0;
  double nll = 0.0;
  double prefilter = 0.0;
};

struct TrainResult {
  BiencoderModel model;
  PrefilterModel prefilter;
  std::vector<StepLoss> loss_trace;
  std::size_t synthetic_negatives = 0;
  std::size_t synthetic_warnings = 0;
  bool prefilter_trained = false;
};

struct TrainOptions {
  EncoderShape shape;
  SpotterConfig spotter;
  int synthetic_per_type = 2;
  // Pool of prefilter negatives. For summarization the prefilter scores
  // outputs and this defaults to the output corpus; for reading comprehension
  // it scores inputs and must be the input corpus.
  const CorpusHandle* input_corpus = nullptr;
};

// Minibatch gradient descent on L_nll + lambda * L_prefilter. Negatives per
// instance: the other in-batch positives, n_random_negs corpus samples, and
// synthetic negatives for reading comprehension.
TrainResult train(std::span<const SeedExample> seed, const CorpusHandle& output_corpus,
                  const TrainConfig& cfg, const TrainOptions& opts = {});

// Mean NLL over the seed set with in-batch negatives only; a fixed yardstick
// for comparing models.
double mean_seed_nll(const BiencoderModel& model, std::span<const SeedExample> seed);

// "PMBI" checkpoint: u32 version, u32 num_buckets, u32 dim, f32 embedding and
// projection row-major, then dim f32 prefilter weights and one f32 bias.
inline constexpr std::uint32_t kBiencoderFormatVersion = 1;
std::string serialize_biencoder(const BiencoderModel& model, const PrefilterModel& pf);
void deserialize_biencoder(std::string_view bytes, BiencoderModel& model, PrefilterModel& pf);
void save_biencoder(const std::filesystem::path& path, const BiencoderModel& model,
                    const PrefilterModel& pf);
void load_biencoder(const std::filesystem::path& path, BiencoderModel& model, PrefilterModel& pf);

}  // namespace pairmine
