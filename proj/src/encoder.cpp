#include "pairmine/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "binio.hpp"
#include "pairmine/text.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

namespace {

constexpr double kDegenerateNorm = 1e-12;

// Forward/backward over a set of embedded items sharing one model. Each item
// keeps its pooled mean, pre-normalization vector and unit output so gradients
// w.r.t. the outputs can be pushed back in one pass.
class EmbedTape {
 public:
  explicit EmbedTape(const BiencoderModel& model) : model_(model) {}

  std::size_t add(const HashedFeatures* feats) {
    items_.push_back(feats);
    return items_.size() - 1;
  }

  void forward() {
    const auto d = static_cast<Eigen::Index>(model_.dim);
    const auto n = static_cast<Eigen::Index>(items_.size());
    means_.setZero(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const HashedFeatures& f = *items_[static_cast<std::size_t>(j)];
      if (f.empty()) throw UnembeddableError("unembeddable record: empty features");
      if (f.num_buckets != model_.num_buckets) {
        throw UnembeddableError("feature space has " + std::to_string(f.num_buckets) +
                                " buckets, model has " + std::to_string(model_.num_buckets));
      }
      const double total = static_cast<double>(f.total_count());
      for (const auto& [bucket, count] : f.entries) {
        means_.col(j) += (static_cast<double>(count) / total) *
                         model_.embedding.row(bucket).transpose();
      }
    }
    pre_.noalias() = model_.projection * means_;
    norms_ = pre_.colwise().norm().transpose();
    unit_.resize(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!(norms_(j) >= kDegenerateNorm)) {
        throw UnembeddableError("degenerate embedding (norm " + std::to_string(norms_(j)) + ")");
      }
      unit_.col(j) = pre_.col(j) / norms_(j);
    }
    dunit_.setZero(d, n);
  }

  auto unit(std::size_t j) const { return unit_.col(static_cast<Eigen::Index>(j)); }
  auto dunit(std::size_t j) { return dunit_.col(static_cast<Eigen::Index>(j)); }

  void backward(BiencoderGrad& grad) const {
    const auto n = static_cast<Eigen::Index>(items_.size());
    if (n == 0) return;
    Eigen::MatrixXd dpre(unit_.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto v = unit_.col(j);
      const auto g = dunit_.col(j);
      dpre.col(j) = (g - v * v.dot(g)) / norms_(j);
    }
    grad.projection.noalias() += dpre * means_.transpose();
    const Eigen::MatrixXd dmean = model_.projection.transpose() * dpre;
    for (Eigen::Index j = 0; j < n; ++j) {
      const HashedFeatures& f = *items_[static_cast<std::size_t>(j)];
      const double total = static_cast<double>(f.total_count());
      for (const auto& [bucket, count] : f.entries) {
        grad.add_row(bucket, (static_cast<double>(count) / total) * dmean.col(j));
      }
    }
  }

 private:
  const BiencoderModel& model_;
  std::vector<const HashedFeatures*> items_;
  Eigen::MatrixXd means_, pre_, unit_, dunit_;
  Eigen::VectorXd norms_;
};

// Gradient of -log softmax(scores)[pos] w.r.t. scores.
std::vector<double> softmax_nll_grad(std::span<const double> scores, std::size_t pos) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += (p[i] = std::exp(scores[i] - mx));
  for (double& v : p) v /= z;
  p[pos] -= 1.0;
  return p;
}

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double bce_from_logit(double z, bool positive) {
  return positive ? softplus(-z) : softplus(z);
}

// Adds NLL terms for one instance living on `tape`: x at index xi, positive at
// ypos, negatives at yneg. Returns the loss; scales gradients by `scale`.
double accumulate_nll(EmbedTape& tape, std::size_t xi, std::size_t ypos,
                      std::span<const std::size_t> yneg, double scale) {
  std::vector<std::size_t> ys;
  ys.reserve(yneg.size() + 1);
  ys.push_back(ypos);
  ys.insert(ys.end(), yneg.begin(), yneg.end());
  std::vector<double> scores(ys.size());
  for (std::size_t j = 0; j < ys.size(); ++j) scores[j] = tape.unit(xi).dot(tape.unit(ys[j]));
  const double loss = softmax_nll(scores, 0);
  const std::vector<double> g = softmax_nll_grad(scores, 0);
  for (std::size_t j = 0; j < ys.size(); ++j) {
    tape.dunit(xi) += (scale * g[j]) * tape.unit(ys[j]);
    tape.dunit(ys[j]) += (scale * g[j]) * tape.unit(xi);
  }
  return loss;
}

double accumulate_prefilter(EmbedTape& tape, std::size_t item, const PrefilterModel& pf,
                            bool positive, double scale, BiencoderGrad& grad) {
  const double z = pf.weight.dot(tape.unit(item)) + pf.bias;
  const double dz = sigmoid(z) - (positive ? 1.0 : 0.0);
  grad.prefilter_weight += (scale * dz) * tape.unit(item);
  grad.prefilter_bias += scale * dz;
  tape.dunit(item) += (scale * dz) * pf.weight;
  return bce_from_logit(z, positive);
}

}  // namespace

BiencoderModel BiencoderModel::init(std::uint32_t num_buckets, std::uint32_t dim,
                                    std::uint64_t seed) {
  if (!is_power_of_two(num_buckets)) {
    throw ConfigError("num_buckets must be a power of two, got " + std::to_string(num_buckets));
  }
  if (dim == 0) throw ConfigError("dim must be positive");
  BiencoderModel m;
  m.num_buckets = num_buckets;
  m.dim = dim;
  m.rng_seed = seed;
  Rng rng(derive_seed(seed, "biencoder.init"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  m.embedding.resize(num_buckets, dim);
  for (Eigen::Index i = 0; i < m.embedding.size(); ++i) m.embedding.data()[i] = scale * rng.normal();
  m.projection = Eigen::MatrixXd::Identity(dim, dim);
  const double pscale = 0.01 * scale;
  for (Eigen::Index c = 0; c < m.projection.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.projection.rows(); ++r) m.projection(r, c) += pscale * rng.normal();
  }
  return m;
}

bool BiencoderModel::all_finite() const {
  return embedding.allFinite() && projection.allFinite();
}

PrefilterModel PrefilterModel::zeros(std::uint32_t dim) {
  return PrefilterModel{Eigen::VectorXd::Zero(dim), 0.0};
}

BiencoderGrad BiencoderGrad::zeros(std::uint32_t dim) {
  BiencoderGrad g;
  g.projection = Eigen::MatrixXd::Zero(dim, dim);
  g.prefilter_weight = Eigen::VectorXd::Zero(dim);
  return g;
}

void BiencoderGrad::add_row(std::uint32_t row, const Eigen::VectorXd& g) {
  auto it = embedding_rows.find(row);
  if (it == embedding_rows.end()) {
    embedding_rows.emplace(row, g);
  } else {
    it->second += g;
  }
}

void BiencoderGrad::check_finite() const {
  for (const auto& [row, g] : embedding_rows) {
    if (!g.allFinite()) {
      throw NumericError("non-finite gradient in embedding_table row " + std::to_string(row));
    }
  }
  if (!projection.allFinite()) throw NumericError("non-finite gradient in projection");
  if (!prefilter_weight.allFinite() || !std::isfinite(prefilter_bias)) {
    throw NumericError("non-finite gradient in prefilter");
  }
}

UnitVector embed(const BiencoderModel& model, const HashedFeatures& feats) {
  EmbedTape tape(model);
  tape.add(&feats);
  tape.forward();
  return tape.unit(0);
}

std::vector<UnitVector> embed_all(const BiencoderModel& model,
                                  std::span<const HashedFeatures> feats) {
  std::vector<UnitVector> out(feats.size());
  parallel_chunks(feats.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = embed(model, feats[i]);
  });
  return out;
}

double softmax_nll(std::span<const double> scores, std::size_t positive) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  return mx + std::log(z) - scores[positive];
}

LossAndGrad nll_loss_and_grad(const BiencoderModel& model, const TrainInstance& inst) {
  EmbedTape tape(model);
  const std::size_t xi = tape.add(&inst.x);
  const std::size_t yp = tape.add(&inst.y_pos);
  std::vector<std::size_t> negs;
  for (const auto& f : inst.y_negs) negs.push_back(tape.add(&f));
  tape.forward();
  LossAndGrad out{0.0, BiencoderGrad::zeros(model.dim)};
  out.loss = accumulate_nll(tape, xi, yp, negs, 1.0);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss in nll");
  tape.backward(out.grad);
  out.grad.check_finite();
  return out;
}

LossAndGrad prefilter_loss_and_grad(const BiencoderModel& model, const PrefilterModel& pf,
                                    const HashedFeatures& feats, bool positive) {
  EmbedTape tape(model);
  tape.add(&feats);
  tape.forward();
  LossAndGrad out{0.0, BiencoderGrad::zeros(model.dim)};
  out.loss = accumulate_prefilter(tape, 0, pf, positive, 1.0, out.grad);
  tape.backward(out.grad);
  out.grad.check_finite();
  return out;
}

double prefilter_from_vector(const PrefilterModel& model, const UnitVector& v) {
  return sigmoid(model.weight.dot(v) + model.bias);
}

double prefilter(const PrefilterModel& model, const HashedFeatures& feats,
                 const BiencoderModel& bimodel) {
  return prefilter_from_vector(model, embed(bimodel, feats));
}

double percentile(std::vector<double> scores, double q) {
  if (scores.empty()) throw Error("percentile of empty list");
  std::sort(scores.begin(), scores.end());
  const double rank = std::ceil(q * static_cast<double>(scores.size()));
  const std::size_t idx = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  return scores[std::min(idx, scores.size() - 1)];
}

std::vector<std::size_t> select_top_fraction(std::span<const double> scores, double retention) {
  if (!(retention > 0.0 && retention <= 1.0)) {
    throw ConfigError("retention must be in (0, 1]");
  }
  const std::size_t n = scores.size();
  const auto keep = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(retention * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

SyntheticNegatives synthesize_negatives(const SeedExample& example, const SpotterConfig& spotter,
                                        const CorpusHandle& corpus,
                                        const SyntheticNegConfig& cfg) {
  if (example.task != Task::reading_comprehension) {
    throw Error("synthetic negatives are defined for reading comprehension only");
  }
  SyntheticNegatives out;
  Rng rng(cfg.rng_seed);
  const Record& gold = example.y;
  const std::optional<std::string> gold_answer = gold.answer();
  const std::string gold_answer_norm = gold_answer ? normalize_for_match(*gold_answer) : "";

  // (a) gold passage, other spotted span.
  std::vector<SpottedSpan> alts;
  for (const SpottedSpan& s : spot_spans(gold.text, spotter)) {
    const std::string text = utf8_substr(gold.text, s.span.begin, s.span.end);
    if (normalize_for_match(text) == gold_answer_norm) continue;
    alts.push_back(s);
  }
  for (std::size_t idx : rng.sample_distinct(alts.size(), static_cast<std::size_t>(cfg.per_type))) {
    Record r = gold;
    r.side = Side::output;
    r.meta.erase(std::string(meta_keys::answer_text));
    r.set_answer_span(alts[idx].span);
    out.records.push_back(std::move(r));
    ++out.from_alt_spans;
  }

  // (b) gold answer, different passage. Passages are deduplicated by text so a
  // passage with many spotted spans is not oversampled.
  if (gold_answer) {
    std::vector<const Record*> passages;
    std::map<std::string, bool, std::less<>> seen;
    for (const Record& r : corpus.records()) {
      if (r.text == gold.text) continue;
      if (seen.emplace(r.text, true).second) passages.push_back(&r);
    }
    for (std::size_t idx :
         rng.sample_distinct(passages.size(), static_cast<std::size_t>(cfg.per_type))) {
      Record r;
      r.id = passages[idx]->id;
      r.side = Side::output;
      r.text = passages[idx]->text;
      r.meta[std::string(meta_keys::answer_text)] = *gold_answer;
      out.records.push_back(std::move(r));
      ++out.from_alt_passages;
    }
  }
  if (out.records.empty()) ++out.warnings;
  return out;
}

namespace {

class FeatureCache {
 public:
  explicit FeatureCache(std::uint32_t num_buckets) : num_buckets_(num_buckets) {}
  const HashedFeatures& get(const Record& r) {
    auto it = cache_.find(r.id);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(r.id, featurize(encoder_text(r), num_buckets_)).first->second;
  }

 private:
  std::uint32_t num_buckets_;
  std::unordered_map<RecordId, HashedFeatures> cache_;
};

void apply_update(BiencoderModel& model, PrefilterModel& pf, const BiencoderGrad& g, double lr) {
  for (const auto& [row, gr] : g.embedding_rows) {
    model.embedding.row(row) -= lr * gr.transpose();
  }
  model.projection -= lr * g.projection;
  pf.weight -= lr * g.prefilter_weight;
  pf.bias -= lr * g.prefilter_bias;
}

}  // namespace

TrainResult train(std::span<const SeedExample> seed, const CorpusHandle& output_corpus,
                  const TrainConfig& cfg, const TrainOptions& opts) {
  if (seed.empty()) throw ConfigError("training requires a non-empty seed set");
  if (output_corpus.empty()) throw ConfigError("training requires a non-empty output corpus");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ConfigError("learning_rate must be finite and > 0");
  }
  if (cfg.steps < 0) throw ConfigError("steps must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");

  TrainResult result;
  result.model = BiencoderModel::init(opts.shape.num_buckets, opts.shape.dim, cfg.rng_seed);
  result.prefilter = PrefilterModel::zeros(opts.shape.dim);
  BiencoderModel& model = result.model;
  PrefilterModel& pf = result.prefilter;
  const std::uint32_t nb = opts.shape.num_buckets;

  const Task task = seed.front().task;
  // Which side the prefilter classifies, and where its negatives come from.
  const bool prefilter_on_inputs = task == Task::reading_comprehension;
  const CorpusHandle* pf_pool = prefilter_on_inputs ? opts.input_corpus : &output_corpus;
  result.prefilter_trained = pf_pool != nullptr && !pf_pool->empty() && cfg.multitask_weight != 0.0;

  const std::size_t m = seed.size();
  std::vector<HashedFeatures> seed_x(m), seed_y(m);
  std::vector<std::vector<HashedFeatures>> synth(m);
  for (std::size_t i = 0; i < m; ++i) {
    seed_x[i] = featurize(encoder_text(seed[i].x), nb);
    seed_y[i] = featurize(encoder_text(seed[i].y), nb);
    if (seed_x[i].empty() || seed_y[i].empty()) {
      throw UnembeddableError("seed example " + std::to_string(i) + " has no features");
    }
    if (task == Task::reading_comprehension) {
      SyntheticNegConfig sc{opts.synthetic_per_type,
                            derive_seed(cfg.rng_seed, "synthetic." + std::to_string(i))};
      SyntheticNegatives sn = synthesize_negatives(seed[i], opts.spotter, output_corpus, sc);
      result.synthetic_warnings += sn.warnings;
      for (const Record& r : sn.records) {
        HashedFeatures f = featurize(encoder_text(r), nb);
        if (!f.empty()) synth[i].push_back(std::move(f));
      }
      result.synthetic_negatives += synth[i].size();
    }
  }

  FeatureCache out_cache(nb);
  FeatureCache pool_cache(nb);
  Rng rng(derive_seed(cfg.rng_seed, "biencoder.train"));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::size_t cursor = 0;
  const std::size_t batch = std::min<std::size_t>(m, static_cast<std::size_t>(cfg.batch_size));
  const auto& out_records = output_corpus.records();

  auto sample_output = [&](const std::string& avoid) -> const HashedFeatures* {
    for (int attempt = 0; attempt < 8; ++attempt) {
      const Record& r = out_records[rng.below(out_records.size())];
      if (encoder_text(r) == avoid) continue;
      const HashedFeatures& f = out_cache.get(r);
      if (!f.empty()) return &f;
    }
    return nullptr;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> idx(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == m) {
        rng.shuffle(order);
        cursor = 0;
      }
      idx[b] = order[cursor++];
    }

    EmbedTape tape(model);
    std::vector<std::size_t> xs(batch), ys(batch);
    std::vector<std::vector<std::size_t>> randoms(batch), synths(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      xs[b] = tape.add(&seed_x[idx[b]]);
      ys[b] = tape.add(&seed_y[idx[b]]);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const std::string avoid = encoder_text(seed[idx[b]].y);
      for (int r = 0; r < cfg.n_random_negs; ++r) {
        if (const HashedFeatures* f = sample_output(avoid)) randoms[b].push_back(tape.add(f));
      }
      for (const HashedFeatures& f : synth[idx[b]]) synths[b].push_back(tape.add(&f));
    }
    // Prefilter examples: positives are the seed side being filtered; negatives
    // are corpus samples, prefilter_negs per positive. For output-side
    // filtering the instance's random negatives double as those samples.
    std::vector<std::pair<std::size_t, bool>> pf_items;
    if (result.prefilter_trained) {
      for (std::size_t b = 0; b < batch; ++b) {
        pf_items.emplace_back(prefilter_on_inputs ? xs[b] : ys[b], true);
        if (prefilter_on_inputs) {
          const auto& pool = pf_pool->records();
          for (int r = 0; r < cfg.n_random_negs; ++r) {
            const Record& rec = pool[rng.below(pool.size())];
            const HashedFeatures& f = pool_cache.get(rec);
            if (!f.empty()) pf_items.emplace_back(tape.add(&f), false);
          }
        } else {
          for (std::size_t t : randoms[b]) pf_items.emplace_back(t, false);
        }
      }
    }

    tape.forward();
    BiencoderGrad grad = BiencoderGrad::zeros(model.dim);
    StepLoss sl;
    const double inst_scale = 1.0 / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      std::vector<std::size_t> negs;
      for (std::size_t o = 0; o < batch; ++o) {
        if (o != b) negs.push_back(ys[o]);
      }
      negs.insert(negs.end(), randoms[b].begin(), randoms[b].end());
      negs.insert(negs.end(), synths[b].begin(), synths[b].end());
      if (negs.empty()) continue;  // single-example seed with no negatives
      sl.nll += inst_scale * accumulate_nll(tape, xs[b], ys[b], negs, inst_scale);
    }
    if (!pf_items.empty()) {
      const double pf_scale = cfg.multitask_weight / static_cast<double>(pf_items.size());
      double pf_loss = 0.0;
      for (const auto& [item, positive] : pf_items) {
        pf_loss += accumulate_prefilter(tape, item, pf, positive, pf_scale, grad);
      }
      sl.prefilter = pf_loss / static_cast<double>(pf_items.size());
    }
    sl.total = sl.nll + cfg.multitask_weight * sl.prefilter;
    if (!std::isfinite(sl.total)) {
      throw NumericError("biencoder training diverged at step " + std::to_string(step));
    }
    tape.backward(grad);
    try {
      grad.check_finite();
    } catch (const NumericError& e) {
      throw NumericError("biencoder training diverged at step " + std::to_string(step) + ": " +
                         e.what());
    }
    result.loss_trace.push_back(sl);
    apply_update(model, pf, grad, cfg.learning_rate);
  }
  if (!model.all_finite()) throw NumericError("biencoder parameters became non-finite");
  return result;
}

double mean_seed_nll(const BiencoderModel& model, std::span<const SeedExample> seed) {
  if (seed.size() < 2) throw Error("mean_seed_nll needs at least two seed examples");
  std::vector<HashedFeatures> xs, ys;
  for (const SeedExample& s : seed) {
    xs.push_back(featurize(encoder_text(s.x), model.num_buckets));
    ys.push_back(featurize(encoder_text(s.y), model.num_buckets));
  }
  const std::vector<UnitVector> xv = embed_all(model, xs);
  const std::vector<UnitVector> yv = embed_all(model, ys);
  double total = 0.0;
  std::vector<double> scores(seed.size());
  for (std::size_t i = 0; i < seed.size(); ++i) {
    scores[0] = xv[i].dot(yv[i]);
    std::size_t k = 1;
    for (std::size_t j = 0; j < seed.size(); ++j) {
      if (j != i) scores[k++] = xv[i].dot(yv[j]);
    }
    total += softmax_nll(scores, 0);
  }
  return total / static_cast<double>(seed.size());
}

std::string serialize_biencoder(const BiencoderModel& model, const PrefilterModel& pf) {
  std::string out;
  const std::size_t nb = model.num_buckets, d = model.dim;
  out.reserve(16 + 4 * (nb * d + d * d + d + 1));
  out += "PMBI";
  binio::put_u32(out, kBiencoderFormatVersion);
  binio::put_u32(out, model.num_buckets);
  binio::put_u32(out, model.dim);
  for (std::size_t i = 0; i < nb * d; ++i) {
    binio::put_f32(out, static_cast<float>(model.embedding.data()[i]));
  }
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      binio::put_f32(out, static_cast<float>(model.projection(static_cast<Eigen::Index>(r),
                                                              static_cast<Eigen::Index>(c))));
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    binio::put_f32(out, static_cast<float>(pf.weight(static_cast<Eigen::Index>(i))));
  }
  binio::put_f32(out, static_cast<float>(pf.bias));
  return out;
}

void deserialize_biencoder(std::string_view bytes, BiencoderModel& model, PrefilterModel& pf) {
  binio::Reader in(bytes, "biencoder checkpoint");
  in.expect_magic("PMBI");
  const std::uint32_t version = in.u32();
  if (version != kBiencoderFormatVersion) {
    throw ParseError("biencoder checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t nb = in.u32();
  const std::uint32_t d = in.u32();
  if (!is_power_of_two(nb) || d == 0) throw ParseError("biencoder checkpoint: bad shape");
  const std::uint64_t nbd = static_cast<std::uint64_t>(nb) * d;
  in.require(4 * (nbd + static_cast<std::uint64_t>(d) * d + d + 1));
  model.num_buckets = nb;
  model.dim = d;
  model.embedding.resize(nb, d);
  for (std::uint64_t i = 0; i < nbd; ++i) model.embedding.data()[i] = in.f32();
  model.projection.resize(d, d);
  for (std::uint32_t r = 0; r < d; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) model.projection(r, c) = in.f32();
  }
  pf.weight.resize(d);
  for (std::uint32_t i = 0; i < d; ++i) pf.weight(i) = in.f32();
  pf.bias = in.f32();
  in.expect_end();
  if (!model.all_finite() || !pf.weight.allFinite() || !std::isfinite(pf.bias)) {
    throw NumericError("biencoder checkpoint contains non-finite parameters");
  }
}

void save_biencoder(const std::filesystem::path& path, const BiencoderModel& model,
                    const PrefilterModel& pf) {
  write_file_atomic(path, serialize_biencoder(model, pf));
}

void load_biencoder(const std::filesystem::path& path, BiencoderModel& model, PrefilterModel& pf) {
  deserialize_biencoder(read_file(path), model, pf);
}

}  // namespace pairmine
