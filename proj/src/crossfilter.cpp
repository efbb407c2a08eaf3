#include "pairmine/crossfilter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "binio.hpp"
#include "pairmine/error.hpp"
#include "pairmine/text.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

namespace {

using NgramCounts = std::map<std::string, std::size_t, std::less<>>;

NgramCounts ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string g = toks[i];
    for (std::size_t j = 1; j < n; ++j) {
      g += '\x1f';
      g += toks[i + j];
    }
    ++counts[g];
  }
  return counts;
}

std::size_t total(const NgramCounts& c) {
  std::size_t n = 0;
  for (const auto& kv : c) n += kv.second;
  return n;
}

std::size_t clipped_matches(const NgramCounts& a, const NgramCounts& b) {
  std::size_t m = 0;
  for (const auto& [g, n] : a) {
    auto it = b.find(g);
    if (it != b.end()) m += std::min(n, it->second);
  }
  return m;
}

// matches / denom; two empty sides count as a perfect match.
double ratio(std::size_t matches, std::size_t denom, std::size_t other) {
  if (denom == 0) return other == 0 ? 1.0 : 0.0;
  return static_cast<double>(matches) / static_cast<double>(denom);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

struct Forward {
  Eigen::VectorXd act;  // tanh(W1 f + b1)
  double out = 0.0;
};

Forward forward(const CrossModel& m, std::span<const double> feats) {
  if (feats.size() != m.input_dim()) {
    throw Error("crossencoder expects " + std::to_string(m.input_dim()) + " features, got " +
                std::to_string(feats.size()));
  }
  const Eigen::Map<const Eigen::VectorXd> f(feats.data(), static_cast<Eigen::Index>(feats.size()));
  Forward fw;
  fw.act = (m.w1 * f + m.b1).array().tanh().matrix();
  fw.out = m.w2.dot(fw.act) + m.b2;
  return fw;
}

// Adds dscore * d(score)/d(params) into grad (params() layout).
void accumulate_param_grad(const CrossModel& m, std::span<const double> feats, const Forward& fw,
                           double dscore, std::vector<double>& grad) {
  const auto h = static_cast<Eigen::Index>(m.hidden());
  const auto in = static_cast<Eigen::Index>(m.input_dim());
  const Eigen::VectorXd dpre =
      (dscore * m.w2.array() * (1.0 - fw.act.array().square())).matrix();
  std::size_t o = 0;
  for (Eigen::Index c = 0; c < in; ++c) {
    for (Eigen::Index r = 0; r < h; ++r) grad[o++] += dpre(r) * feats[static_cast<std::size_t>(c)];
  }
  for (Eigen::Index r = 0; r < h; ++r) grad[o++] += dpre(r);
  for (Eigen::Index r = 0; r < h; ++r) grad[o++] += dscore * fw.act(r);
  grad[o] += dscore;
}

void check_step(const CrossModel& m, double loss, int step) {
  if (!std::isfinite(loss) || !m.all_finite()) {
    throw NumericError("crossencoder training diverged at step " + std::to_string(step));
  }
}

}  // namespace

FeatureVector interaction_features(const Record& x, const Record& y, const UnitVector& x_vec,
                                   const UnitVector& y_vec) {
  const std::vector<std::string> tx = tokenize(encoder_text(x));
  const std::vector<std::string> ty = tokenize(encoder_text(y));
  FeatureVector f(kNumInteractionFeatures, 0.0);
  f[kFeatCosine] = std::clamp(x_vec.dot(y_vec), -1.0, 1.0);

  const NgramCounts ux = ngram_counts(tx, 1), uy = ngram_counts(ty, 1);
  const NgramCounts bx = ngram_counts(tx, 2), by = ngram_counts(ty, 2);
  const std::size_t um = clipped_matches(uy, ux);
  const std::size_t bm = clipped_matches(by, bx);
  f[kFeatUnigramPrecision] = ratio(um, total(uy), total(ux));
  f[kFeatUnigramRecall] = ratio(um, total(ux), total(uy));
  f[kFeatBigramPrecision] = ratio(bm, total(by), total(bx));
  f[kFeatBigramRecall] = ratio(bm, total(bx), total(by));
  f[kFeatLogLenX] = std::log1p(static_cast<double>(tx.size()));
  f[kFeatLogLenY] = std::log1p(static_cast<double>(ty.size()));
  f[kFeatLengthRatio] = static_cast<double>(ty.size()) / static_cast<double>(std::max<std::size_t>(1, tx.size()));
  std::size_t novel = 0;
  for (const std::string& t : ty) novel += ux.count(t) == 0;
  f[kFeatNovelFraction] = ty.empty() ? 0.0 : static_cast<double>(novel) / static_cast<double>(ty.size());
  if (y.answer()) {
    auto it = y.meta.find(meta_keys::answer_type);
    f[kFeatSpanType] = (it != y.meta.end() && it->second == "number") ? 1.0 : 0.5;
  }
  return f;
}

CrossMode parse_cross_mode(std::string_view name) {
  if (name == "binary") return CrossMode::binary;
  if (name == "pairwise") return CrossMode::pairwise;
  throw ConfigError("unknown crossencoder mode '" + std::string(name) + "'");
}

std::string_view to_string(CrossMode mode) {
  return mode == CrossMode::binary ? "binary" : "pairwise";
}

CrossModel CrossModel::zeros(std::size_t input_dim, std::size_t hidden, CrossMode mode) {
  CrossModel m;
  m.w1 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(input_dim));
  m.b1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden));
  m.w2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden));
  m.mode = mode;
  return m;
}

CrossModel CrossModel::init(std::size_t input_dim, std::size_t hidden, CrossMode mode,
                            std::uint64_t seed) {
  if (input_dim == 0 || hidden == 0) throw ConfigError("crossencoder dimensions must be positive");
  CrossModel m = zeros(input_dim, hidden, mode);
  m.rng_seed = seed;
  Rng rng(derive_seed(seed, "cross.init"));
  const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Eigen::Index c = 0; c < m.w1.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.w1.rows(); ++r) m.w1(r, c) = s1 * rng.normal();
  }
  for (Eigen::Index r = 0; r < m.w2.size(); ++r) m.w2(r) = s2 * rng.normal();
  return m;
}

std::vector<double> CrossModel::params() const {
  std::vector<double> p;
  p.reserve(static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + 1));
  p.insert(p.end(), w1.data(), w1.data() + w1.size());
  p.insert(p.end(), b1.data(), b1.data() + b1.size());
  p.insert(p.end(), w2.data(), w2.data() + w2.size());
  p.push_back(b2);
  return p;
}

void CrossModel::set_params(std::span<const double> p) {
  const auto need = static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + 1);
  if (p.size() != need) throw Error("crossencoder parameter vector has wrong length");
  std::size_t o = 0;
  std::copy_n(p.data() + o, w1.size(), w1.data());
  o += static_cast<std::size_t>(w1.size());
  std::copy_n(p.data() + o, b1.size(), b1.data());
  o += static_cast<std::size_t>(b1.size());
  std::copy_n(p.data() + o, w2.size(), w2.data());
  o += static_cast<std::size_t>(w2.size());
  b2 = p[o];
}

bool CrossModel::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && std::isfinite(b2);
}

double score(const CrossModel& model, std::span<const double> feats) {
  return forward(model, feats).out;
}

FeatureVector score_input_gradient(const CrossModel& model, std::span<const double> feats) {
  const Forward fw = forward(model, feats);
  const Eigen::VectorXd dpre = (model.w2.array() * (1.0 - fw.act.array().square())).matrix();
  const Eigen::VectorXd g = model.w1.transpose() * dpre;
  return FeatureVector(g.data(), g.data() + g.size());
}

CrossLoss binary_loss_and_grad(const CrossModel& model, std::span<const FeatureVector> positives,
                               std::span<const FeatureVector> negatives) {
  CrossLoss out;
  out.grad.assign(model.params().size(), 0.0);
  auto add_class = [&](std::span<const FeatureVector> set, bool positive) {
    if (set.empty()) return;
    const double w = 0.5 / static_cast<double>(set.size());
    for (const FeatureVector& f : set) {
      const Forward fw = forward(model, f);
      out.loss += w * (positive ? softplus(-fw.out) : softplus(fw.out));
      const double ds = positive ? sigmoid(fw.out) - 1.0 : sigmoid(fw.out);
      accumulate_param_grad(model, f, fw, w * ds, out.grad);
    }
  };
  add_class(positives, true);
  add_class(negatives, false);
  return out;
}

double pairwise_loss(double delta) { return softplus(-delta); }

CrossLoss pairwise_loss_and_grad(const CrossModel& model, std::span<const FeatureTriple> triples) {
  CrossLoss out;
  out.grad.assign(model.params().size(), 0.0);
  if (triples.empty()) return out;
  const double w = 1.0 / static_cast<double>(triples.size());
  for (const FeatureTriple& t : triples) {
    const Forward fp = forward(model, t.pos);
    const Forward fn = forward(model, t.neg);
    const double delta = fp.out - fn.out;
    out.loss += w * pairwise_loss(delta);
    // d/d delta of softplus(-delta) = -sigmoid(-delta)
    const double dd = -sigmoid(-delta);
    accumulate_param_grad(model, t.pos, fp, w * dd, out.grad);
    accumulate_param_grad(model, t.neg, fn, -w * dd, out.grad);
  }
  return out;
}

namespace {

template <typename LossFn>
CrossTrainResult descend(CrossModel model, const CrossTrainConfig& cfg, LossFn&& loss_fn) {
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ConfigError("crossencoder learning_rate must be finite and > 0");
  }
  if (cfg.steps < 0) throw ConfigError("crossencoder steps must be >= 0");
  CrossTrainResult res;
  std::vector<double> p = model.params();
  for (int step = 0; step < cfg.steps; ++step) {
    const CrossLoss l = loss_fn(model);
    check_step(model, l.loss, step);
    res.loss_trace.push_back(l.loss);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.learning_rate * l.grad[i];
    model.set_params(p);
    check_step(model, 0.0, step);
  }
  res.model = std::move(model);
  return res;
}

}  // namespace

CrossTrainResult train_binary_features(std::span<const FeatureVector> positives,
                                       std::span<const FeatureVector> negatives,
                                       const CrossTrainConfig& cfg) {
  if (positives.empty() || negatives.empty()) {
    throw ConfigError("binary crossencoder training needs positives and negatives");
  }
  const std::size_t width = positives.front().size();
  CrossModel m = CrossModel::init(width, cfg.hidden, CrossMode::binary, cfg.rng_seed);
  return descend(std::move(m), cfg, [&](const CrossModel& model) {
    return binary_loss_and_grad(model, positives, negatives);
  });
}

CrossTrainResult train_pairwise_features(std::span<const FeatureTriple> triples,
                                         const CrossTrainConfig& cfg) {
  if (triples.empty()) throw ConfigError("pairwise crossencoder training needs triples");
  const std::size_t width = triples.front().pos.size();
  CrossModel m = CrossModel::init(width, cfg.hidden, CrossMode::pairwise, cfg.rng_seed);
  return descend(std::move(m), cfg, [&](const CrossModel& model) {
    return pairwise_loss_and_grad(model, triples);
  });
}

UnitVector EncoderFeatureSource::vector_for(const VectorStore& store, const Record& r) const {
  const std::ptrdiff_t i = store.index_of(r.id);
  if (i >= 0) {
    const auto row = store.row(static_cast<std::size_t>(i));
    UnitVector v(static_cast<Eigen::Index>(row.size()));
    for (std::size_t d = 0; d < row.size(); ++d) v(static_cast<Eigen::Index>(d)) = row[d];
    return v;
  }
  return embed(model_, featurize(encoder_text(r), model_.num_buckets));
}

FeatureVector EncoderFeatureSource::candidate_features(const PairCandidate& c) const {
  const Record& x = xc_.at(c.x_id);
  const Record& y = yc_.at(c.y_id);
  return interaction_features(x, y, vector_for(xv_, x), vector_for(yv_, y));
}

FeatureVector EncoderFeatureSource::pair_features(const Record& x, const Record& y) const {
  const UnitVector xv = embed(model_, featurize(encoder_text(x), model_.num_buckets));
  const UnitVector yv = embed(model_, featurize(encoder_text(y), model_.num_buckets));
  return interaction_features(x, y, xv, yv);
}

std::vector<std::size_t> stratified_negative_indices(std::size_t num_candidates,
                                                     std::size_t num_positives,
                                                     std::size_t top_decile_each,
                                                     std::size_t uniform_each, std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (num_candidates == 0) return out;
  const std::size_t decile = std::max<std::size_t>(1, (num_candidates + 9) / 10);
  Rng rng(derive_seed(seed, "cross.negatives"));
  out.reserve(num_positives * (top_decile_each + uniform_each));
  for (std::size_t p = 0; p < num_positives; ++p) {
    for (std::size_t j = 0; j < top_decile_each; ++j) out.push_back(rng.below(decile));
    for (std::size_t j = 0; j < uniform_each; ++j) out.push_back(rng.below(num_candidates));
  }
  return out;
}

CrossTrainResult train_binary(std::span<const SeedExample> positives,
                              std::span<const PairCandidate> negatives,
                              const FeatureSource& source, const CrossTrainConfig& cfg) {
  std::vector<FeatureVector> pos, neg;
  pos.reserve(positives.size());
  for (const SeedExample& s : positives) pos.push_back(source.pair_features(s.x, s.y));
  neg.reserve(negatives.size());
  for (const PairCandidate& c : negatives) neg.push_back(source.candidate_features(c));
  return train_binary_features(pos, neg, cfg);
}

TripleBuild build_rank_triples(std::span<const SeedExample> seed, const BiencoderModel& model,
                               const Index& y_index, const CorpusHandle& y_corpus,
                               std::size_t hard_negatives, std::uint32_t nprobe) {
  TripleBuild out;
  if (y_index.size() == 0) {
    out.skipped_documents = seed.size();
    return out;
  }
  const std::uint32_t probe = y_index.kind() == IndexKind::ivf ? std::min(nprobe, y_index.nlist()) : 1u;
  for (const SeedExample& s : seed) {
    const UnitVector xv = embed(model, featurize(encoder_text(s.x), model.num_buckets));
    std::vector<float> q(static_cast<std::size_t>(xv.size()));
    for (std::size_t d = 0; d < q.size(); ++d) q[d] = static_cast<float>(xv(static_cast<Eigen::Index>(d)));
    const std::string gold = normalize_for_match(encoder_text(s.y));
    const Neighborhood nb = y_index.search_one(q, s.x.id, hard_negatives + 1, probe);
    std::size_t added = 0;
    for (std::uint64_t id : nb.neighbor_ids) {
      if (added == hard_negatives) break;
      const Record& y = y_corpus.at(id);
      if (normalize_for_match(encoder_text(y)) == gold) continue;
      out.triples.push_back(RankTriple{s.x, s.y, y});
      ++added;
    }
    if (added == 0) ++out.skipped_documents;
  }
  return out;
}

CrossTrainResult train_pairwise(std::span<const RankTriple> triples, const FeatureSource& source,
                                const CrossTrainConfig& cfg) {
  std::vector<FeatureTriple> ft;
  ft.reserve(triples.size());
  for (const RankTriple& t : triples) {
    ft.push_back(FeatureTriple{source.pair_features(t.x, t.y_pos), source.pair_features(t.x, t.y_neg)});
  }
  return train_pairwise_features(ft, cfg);
}

bool cross_order(const PairCandidate& a, const PairCandidate& b) {
  const double sa = a.cross_score.value_or(-std::numeric_limits<double>::infinity());
  const double sb = b.cross_score.value_or(-std::numeric_limits<double>::infinity());
  if (sa != sb) return sa > sb;
  if (a.margin != b.margin) return a.margin > b.margin;
  if (a.x_id != b.x_id) return a.x_id < b.x_id;
  return a.y_id < b.y_id;
}

namespace {

std::vector<PairCandidate> finish_rerank(std::vector<PairCandidate> out, std::size_t top_n) {
  std::sort(out.begin(), out.end(), cross_order);
  if (out.size() > top_n) out.resize(top_n);
  return out;
}

}  // namespace

std::vector<PairCandidate> rerank(const CrossModel& model, std::span<const PairCandidate> candidates,
                                  const FeatureSource& source, std::size_t top_n) {
  std::vector<PairCandidate> out(candidates.begin(), candidates.end());
  parallel_chunks(out.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      out[i].cross_score = score(model, source.candidate_features(out[i]));
      out[i].stage = Stage::crossencoder;
    }
  });
  for (const PairCandidate& c : out) {
    if (!std::isfinite(*c.cross_score)) {
      throw NumericError("non-finite crossencoder score for pair " + pair_key(c.x_id, c.y_id));
    }
  }
  return finish_rerank(std::move(out), top_n);
}

std::vector<PairCandidate> rerank_with_scores(std::span<const PairCandidate> candidates,
                                              const std::map<std::string, double>& scores,
                                              std::size_t top_n) {
  std::vector<PairCandidate> out(candidates.begin(), candidates.end());
  for (PairCandidate& c : out) {
    const std::string key = pair_key(c.x_id, c.y_id);
    auto it = scores.find(key);
    if (it == scores.end()) throw Error("no external score for pair " + key);
    c.cross_score = it->second;
    c.stage = Stage::crossencoder;
  }
  return finish_rerank(std::move(out), top_n);
}

std::string export_for_scoring(std::span<const PairCandidate> candidates,
                               const CorpusHandle& x_corpus, const CorpusHandle& y_corpus) {
  std::string out;
  for (const PairCandidate& c : candidates) {
    nlohmann::ordered_json obj;
    obj["pair_key"] = pair_key(c.x_id, c.y_id);
    obj["x_text"] = x_corpus.at(c.x_id).text;
    obj["y_text"] = encoder_text(y_corpus.at(c.y_id));
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::map<std::string, double> import_scores(std::string_view content, std::string_view what) {
  std::map<std::string, double> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = std::string(what) + ": line " + std::to_string(line_no);
    try {
      const auto obj = nlohmann::json::parse(line);
      const double s = obj.at("score").get<double>();
      if (!std::isfinite(s)) throw NumericError(where + ": non-finite score");
      if (!out.emplace(obj.at("pair_key").get<std::string>(), s).second) {
        throw ParseError(where + ": duplicate pair_key");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return out;
}

std::string serialize_cross(const CrossModel& model) {
  std::string out = "PMCX";
  binio::put_u32(out, kCrossFormatVersion);
  binio::put_u8(out, static_cast<std::uint8_t>(model.mode));
  binio::put_u32(out, static_cast<std::uint32_t>(model.input_dim()));
  binio::put_u32(out, static_cast<std::uint32_t>(model.hidden()));
  for (Eigen::Index r = 0; r < model.w1.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.w1.cols(); ++c) binio::put_f32(out, static_cast<float>(model.w1(r, c)));
  }
  for (Eigen::Index r = 0; r < model.b1.size(); ++r) binio::put_f32(out, static_cast<float>(model.b1(r)));
  for (Eigen::Index r = 0; r < model.w2.size(); ++r) binio::put_f32(out, static_cast<float>(model.w2(r)));
  binio::put_f32(out, static_cast<float>(model.b2));
  return out;
}

CrossModel deserialize_cross(std::string_view bytes, std::string_view what) {
  binio::Reader in(bytes, std::string(what));
  in.expect_magic("PMCX");
  if (in.u32() != kCrossFormatVersion) throw ParseError(std::string(what) + ": unsupported version");
  const std::uint8_t mode = in.u8();
  if (mode > 1) throw ParseError(std::string(what) + ": bad mode");
  const std::uint32_t input = in.u32();
  const std::uint32_t hidden = in.u32();
  if (input == 0 || hidden == 0) throw ParseError(std::string(what) + ": zero dimension");
  in.require((static_cast<std::uint64_t>(hidden) * input + 2ull * hidden + 1) * 4);
  CrossModel m = CrossModel::zeros(input, hidden, static_cast<CrossMode>(mode));
  for (Eigen::Index r = 0; r < m.w1.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.w1.cols(); ++c) m.w1(r, c) = in.f32();
  }
  for (Eigen::Index r = 0; r < m.b1.size(); ++r) m.b1(r) = in.f32();
  for (Eigen::Index r = 0; r < m.w2.size(); ++r) m.w2(r) = in.f32();
  m.b2 = in.f32();
  in.expect_end();
  if (!m.all_finite()) throw NumericError(std::string(what) + ": non-finite parameters");
  return m;
}

void save_cross(const std::filesystem::path& path, const CrossModel& model) {
  write_file_atomic(path, serialize_cross(model));
}

CrossModel load_cross(const std::filesystem::path& path) {
  return deserialize_cross(read_file(path), path.string());
}

}  // namespace pairmine
