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
#include "pairmine/encoder.hpp"
#include "pairmine/knn_index.hpp"
#include "pairmine/miner.hpp"

namespace pairmine {

// Joint (x, y) features fed to the crossencoder head, in this order.
enum InteractionFeature : std::size_t {
  kFeatCosine = 0,
  kFeatUnigramPrecision,
  kFeatUnigramRecall,
  kFeatBigramPrecision,
  kFeatBigramRecall,
  kFeatLogLenX,
  kFeatLogLenY,
  kFeatLengthRatio,
  kFeatNovelFraction,
  kFeatSpanType,
  kNumInteractionFeatures
};

using FeatureVector = std::vector<double>;

// Precisions are y against x, recalls are x covered by y; n-gram counts are
// clipped multiset matches over tokenize(). Span type: 1 for numeric answers,
// 0.5 for entity answers, 0 when y carries no answer.
FeatureVector interaction_features(const Record& x, const Record& y, const UnitVector& x_vec,
                                   const UnitVector& y_vec);

enum class CrossMode : std::uint8_t { binary = 0, pairwise = 1 };
CrossMode parse_cross_mode(std::string_view name);
std::string_view to_string(CrossMode mode);

// score = w2 . tanh(W1 f + b1) + b2
struct CrossModel {
  Eigen::MatrixXd w1;  // hidden x input
  Eigen::VectorXd b1;
  Eigen::VectorXd w2;
  double b2 = 0.0;
  CrossMode mode = CrossMode::binary;
  std::uint64_t rng_seed = 0;

  static CrossModel init(std::size_t input_dim, std::size_t hidden, CrossMode mode,
                         std::uint64_t seed);
  static CrossModel zeros(std::size_t input_dim, std::size_t hidden, CrossMode mode);
  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }

  // Flat parameter view (w1 column-major, b1, w2, b2) for optimizers and
  // finite-difference checks.
  std::vector<double> params() const;
  void set_params(std::span<const double> p);
  bool all_finite() const;
};

inline constexpr std::size_t kDefaultCrossHidden = 16;

double score(const CrossModel& model, std::span<const double> feats);
FeatureVector score_input_gradient(const CrossModel& model, std::span<const double> feats);

struct CrossLoss {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as CrossModel::params()
};

// Class-balanced logistic loss: 0.5 * mean softplus(-s+) + 0.5 * mean softplus(s-).
CrossLoss binary_loss_and_grad(const CrossModel& model, std::span<const FeatureVector> positives,
                               std::span<const FeatureVector> negatives);

struct FeatureTriple {
  FeatureVector pos;
  FeatureVector neg;
};

// Per-triple log(1 + exp(s(x,y-) - s(x,y+))), averaged.
double pairwise_loss(double delta);  // delta = s(x,y+) - s(x,y-)
CrossLoss pairwise_loss_and_grad(const CrossModel& model, std::span<const FeatureTriple> triples);

struct CrossTrainConfig {
  double learning_rate = 5e-2;
  int steps = 500;
  std::size_t hidden = kDefaultCrossHidden;
  std::uint64_t rng_seed = 0;
};

struct CrossTrainResult {
  CrossModel model;
  std::vector<double> loss_trace;
};

CrossTrainResult train_binary_features(std::span<const FeatureVector> positives,
                                       std::span<const FeatureVector> negatives,
                                       const CrossTrainConfig& cfg);
CrossTrainResult train_pairwise_features(std::span<const FeatureTriple> triples,
                                         const CrossTrainConfig& cfg);

// Resolves records and vectors for candidates and seed pairs.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual FeatureVector candidate_features(const PairCandidate& c) const = 0;
  virtual FeatureVector pair_features(const Record& x, const Record& y) const = 0;
};

// Looks candidates up in the corpora and vector stores; records that are not
// in a store (seed examples) are embedded with the biencoder.
class EncoderFeatureSource : public FeatureSource {
 public:
  EncoderFeatureSource(const CorpusHandle& x_corpus, const CorpusHandle& y_corpus,
                       const VectorStore& x_vectors, const VectorStore& y_vectors,
                       const BiencoderModel& model)
      : xc_(x_corpus), yc_(y_corpus), xv_(x_vectors), yv_(y_vectors), model_(model) {}

  FeatureVector candidate_features(const PairCandidate& c) const override;
  FeatureVector pair_features(const Record& x, const Record& y) const override;

 private:
  UnitVector vector_for(const VectorStore& store, const Record& r) const;

  const CorpusHandle& xc_;
  const CorpusHandle& yc_;
  const VectorStore& xv_;
  const VectorStore& yv_;
  const BiencoderModel& model_;
};

// Indices into a margin-ordered candidate list: per positive, top_decile_each
// draws from the top 10% by rank and uniform_each from the whole list.
std::vector<std::size_t> stratified_negative_indices(std::size_t num_candidates,
                                                     std::size_t num_positives,
                                                     std::size_t top_decile_each,
                                                     std::size_t uniform_each, std::uint64_t seed);

CrossTrainResult train_binary(std::span<const SeedExample> positives,
                              std::span<const PairCandidate> negatives,
                              const FeatureSource& source, const CrossTrainConfig& cfg);

struct RankTriple {
  Record x;
  Record y_pos;
  Record y_neg;
};

struct TripleBuild {
  std::vector<RankTriple> triples;
  std::size_t skipped_documents = 0;
};

// Hard negatives for pairwise training: each seed input is embedded and its
// top retrieved outputs whose normalized text differs from the gold output
// become negatives (up to hard_negatives per document).
TripleBuild build_rank_triples(std::span<const SeedExample> seed, const BiencoderModel& model,
                               const Index& y_index, const CorpusHandle& y_corpus,
                               std::size_t hard_negatives, std::uint32_t nprobe = 1);

CrossTrainResult train_pairwise(std::span<const RankTriple> triples, const FeatureSource& source,
                                const CrossTrainConfig& cfg);

// Cross desc, then margin desc, then (x_id, y_id) asc.
bool cross_order(const PairCandidate& a, const PairCandidate& b);

std::vector<PairCandidate> rerank(const CrossModel& model, std::span<const PairCandidate> candidates,
                                  const FeatureSource& source, std::size_t top_n);

// Same ordering with externally produced scores keyed by pair_key().
std::vector<PairCandidate> rerank_with_scores(std::span<const PairCandidate> candidates,
                                              const std::map<std::string, double>& scores,
                                              std::size_t top_n);

// External-scorer exchange: {pair_key, x_text, y_text} out, {pair_key, score} in.
std::string export_for_scoring(std::span<const PairCandidate> candidates,
                               const CorpusHandle& x_corpus, const CorpusHandle& y_corpus);
std::map<std::string, double> import_scores(std::string_view content,
                                            std::string_view what = "scores file");

// "PMCX", u32 version, u8 mode, u32 input_dim, u32 hidden, then f32 w1
// (row-major), b1, w2, b2.
inline constexpr std::uint32_t kCrossFormatVersion = 1;
std::string serialize_cross(const CrossModel& model);
CrossModel deserialize_cross(std::string_view bytes, std::string_view what = "crossencoder checkpoint");
void save_cross(const std::filesystem::path& path, const CrossModel& model);
CrossModel load_cross(const std::filesystem::path& path);

}  // namespace pairmine
