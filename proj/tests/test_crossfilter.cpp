#include <doctest.h>

#include <limits>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pairmine/crossfilter.hpp"
#include "pairmine/error.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace pairmine;

namespace {

Record rec(RecordId id, std::string text, Side side = Side::input) {
  Record r;
  r.id = id;
  r.text = std::move(text);
  r.side = side;
  return r;
}

UnitVector axis(Eigen::Index i, Eigen::Index dim = 3) {
  UnitVector v = UnitVector::Zero(dim);
  v(i) = 1.0;
  return v;
}

// Feature lookup keyed by pair_key, for rerank tests without real corpora.
class TableSource : public FeatureSource {
 public:
  std::map<std::string, FeatureVector> table;
  FeatureVector candidate_features(const PairCandidate& c) const override {
    auto it = table.find(pair_key(c.x_id, c.y_id));
    if (it == table.end()) throw Error("unresolvable record id " + std::to_string(c.y_id));
    return it->second;
  }
  FeatureVector pair_features(const Record& x, const Record& y) const override {
    return candidate_features(PairCandidate{x.id, y.id, 0.0, 0.0, std::nullopt, Stage::biencoder});
  }
};

FeatureVector toy_features(Rng& rng, double cosine) {
  FeatureVector f = testing::random_features(rng, kNumInteractionFeatures);
  for (double& v : f) v = std::abs(v);
  f[kFeatCosine] = cosine;
  return f;
}

std::size_t gold_in_top(const std::vector<PairCandidate>& ranked, std::size_t n) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(n, ranked.size()); ++i) hits += ranked[i].x_id == ranked[i].y_id;
  return hits;
}

}  // namespace

TEST_CASE("identical records give full overlap") {
  const Record x = rec(1, "the quick brown fox");
  const Record y = rec(2, "the quick brown fox", Side::output);
  const FeatureVector f = interaction_features(x, y, axis(0), axis(0));
  REQUIRE(f.size() == kNumInteractionFeatures);
  CHECK(f[kFeatCosine] == 1.0);
  CHECK(f[kFeatUnigramPrecision] == 1.0);
  CHECK(f[kFeatUnigramRecall] == 1.0);
  CHECK(f[kFeatBigramPrecision] == 1.0);
  CHECK(f[kFeatBigramRecall] == 1.0);
  CHECK(f[kFeatNovelFraction] == 0.0);
  CHECK(f[kFeatLengthRatio] == 1.0);
  CHECK(f[kFeatLogLenX] == doctest::Approx(std::log(5.0)));
  CHECK(f[kFeatSpanType] == 0.0);
}

TEST_CASE("disjoint records give zero overlap") {
  const FeatureVector f =
      interaction_features(rec(1, "alpha beta gamma"), rec(2, "delta epsilon", Side::output), axis(0), axis(1));
  CHECK(f[kFeatCosine] == 0.0);
  CHECK(f[kFeatUnigramPrecision] == 0.0);
  CHECK(f[kFeatUnigramRecall] == 0.0);
  CHECK(f[kFeatBigramPrecision] == 0.0);
  CHECK(f[kFeatBigramRecall] == 0.0);
  CHECK(f[kFeatNovelFraction] == 1.0);
}

TEST_CASE("hand-counted overlap precisions") {
  // y unigrams {a, b, x}: a and b occur in x -> 2/3. y bigrams {a b, b x}:
  // only a b occurs in x -> 1/2.
  const FeatureVector f =
      interaction_features(rec(1, "a b c d"), rec(2, "a b x", Side::output), axis(0), axis(0));
  CHECK(f[kFeatUnigramPrecision] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(f[kFeatBigramPrecision] == 0.5);
  CHECK(f[kFeatUnigramRecall] == 0.5);
  CHECK(f[kFeatBigramRecall] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(f[kFeatNovelFraction] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(f[kFeatLengthRatio] == 0.75);
}

TEST_CASE("overlap counts are clipped") {
  const FeatureVector f =
      interaction_features(rec(1, "a b"), rec(2, "a a a a", Side::output), axis(0), axis(0));
  CHECK(f[kFeatUnigramPrecision] == 0.25);
  CHECK(f[kFeatUnigramRecall] == 0.5);
}

TEST_CASE("span type feature") {
  Record y = rec(2, "Alice met Bob in 1990.", Side::output);
  y.set_answer_span(Span{17, 21});
  y.meta["answer_type"] = "number";
  CHECK(interaction_features(rec(1, "when"), y, axis(0), axis(0))[kFeatSpanType] == 1.0);
  y.meta["answer_type"] = "entity";
  CHECK(interaction_features(rec(1, "when"), y, axis(0), axis(0))[kFeatSpanType] == 0.5);
}

TEST_CASE("features are finite and fractions bounded on random text") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const Record x = rec(1, testing::random_text(rng, 1, 12, 8));
    const Record y = rec(2, testing::random_text(rng, 1, 12, 8), Side::output);
    const UnitVector a = UnitVector::Random(4).normalized();
    const UnitVector b = UnitVector::Random(4).normalized();
    const FeatureVector f = interaction_features(x, y, a, b);
    for (double v : f) CHECK(std::isfinite(v));
    for (std::size_t i : {kFeatUnigramPrecision, kFeatUnigramRecall, kFeatBigramPrecision,
                          kFeatBigramRecall, kFeatNovelFraction}) {
      CHECK(f[i] >= 0.0);
      CHECK(f[i] <= 1.0);
    }
    CHECK(f == interaction_features(x, y, a, b));
  }
}

TEST_CASE("zero model scores zero and scoring is deterministic") {
  Rng rng(2);
  const CrossModel zero = CrossModel::zeros(kNumInteractionFeatures, 16, CrossMode::binary);
  const CrossModel m = CrossModel::init(kNumInteractionFeatures, 16, CrossMode::binary, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const FeatureVector f = testing::random_features(rng, kNumInteractionFeatures);
    CHECK(score(zero, f) == 0.0);
    CHECK(score(m, f) == score(m, f));
  }
  CHECK_THROWS_AS(score(m, FeatureVector(3, 0.0)), Error);
}

TEST_CASE("init is seeded and params round trip") {
  const CrossModel a = CrossModel::init(5, 4, CrossMode::pairwise, 7);
  const CrossModel b = CrossModel::init(5, 4, CrossMode::pairwise, 7);
  CHECK(a.params() == b.params());
  CHECK(a.params().size() == 5 * 4 + 4 + 4 + 1);
  CrossModel c = CrossModel::zeros(5, 4, CrossMode::pairwise);
  c.set_params(a.params());
  CHECK(c.w1 == a.w1);
  CHECK(c.w2 == a.w2);
  CHECK(a.all_finite());
}

TEST_CASE("score input gradient matches finite differences") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const CrossModel m = CrossModel::init(kNumInteractionFeatures, 8, CrossMode::binary, trial);
    CHECK(testing::cross_input_grad_error(m, testing::random_features(rng, kNumInteractionFeatures)) <= 1e-4);
  }
}

TEST_CASE("binary loss gradient matches finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    CrossModel m = CrossModel::init(kNumInteractionFeatures, 6, CrossMode::binary, 50 + trial);
    m.b2 = rng.normal();
    std::vector<FeatureVector> pos, neg;
    for (std::size_t i = 0; i < 1 + rng.below(4); ++i) pos.push_back(testing::random_features(rng, kNumInteractionFeatures));
    for (std::size_t i = 0; i < 1 + rng.below(6); ++i) neg.push_back(testing::random_features(rng, kNumInteractionFeatures));
    CHECK(testing::cross_param_grad_error(m, [&](const CrossModel& mm) {
            return binary_loss_and_grad(mm, pos, neg);
          }) <= 1e-4);
  }
}

TEST_CASE("pairwise loss gradient matches finite differences") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const CrossModel m = CrossModel::init(kNumInteractionFeatures, 6, CrossMode::pairwise, 80 + trial);
    std::vector<FeatureTriple> triples;
    for (std::size_t i = 0; i < 1 + rng.below(5); ++i) {
      triples.push_back({testing::random_features(rng, kNumInteractionFeatures),
                         testing::random_features(rng, kNumInteractionFeatures)});
    }
    CHECK(testing::cross_param_grad_error(m, [&](const CrossModel& mm) {
            return pairwise_loss_and_grad(mm, triples);
          }) <= 1e-4);
  }
}

TEST_CASE("pairwise loss values") {
  CHECK(std::abs(pairwise_loss(0.0) - std::log(2.0)) <= 1e-9);
  CHECK(std::abs(pairwise_loss(10.0) - std::log1p(std::exp(-10.0))) <= 1e-15);
  CHECK(pairwise_loss(10.0) == doctest::Approx(4.54e-5).epsilon(1e-3));
  CHECK(std::isfinite(pairwise_loss(-1000.0)));
  CHECK(pairwise_loss(-1000.0) == doctest::Approx(1000.0));
}

TEST_CASE("swapping the pair maps the loss to its mirror, bounded below by 2 ln 2") {
  Rng rng(7);
  CHECK(pairwise_loss(0.0) + pairwise_loss(-0.0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
  for (int trial = 0; trial < 1000; ++trial) {
    const double d = (rng.uniform() - 0.5) * 40.0;
    if (d == 0.0) continue;
    CHECK(pairwise_loss(d) + pairwise_loss(-d) > 2.0 * std::log(2.0));
  }
  const CrossModel m = CrossModel::init(kNumInteractionFeatures, 4, CrossMode::pairwise, 1);
  const FeatureVector a = testing::random_features(rng, kNumInteractionFeatures);
  const FeatureVector b = testing::random_features(rng, kNumInteractionFeatures);
  const std::vector<FeatureTriple> fwd = {{a, b}}, rev = {{b, a}};
  const double delta = score(m, a) - score(m, b);
  CHECK(pairwise_loss_and_grad(m, fwd).loss == doctest::Approx(pairwise_loss(delta)));
  CHECK(pairwise_loss_and_grad(m, rev).loss == doctest::Approx(pairwise_loss(-delta)));
}

TEST_CASE("zero steps return the seeded initialization") {
  Rng rng(8);
  const std::vector<FeatureVector> pos = {toy_features(rng, 1.0)}, neg = {toy_features(rng, 0.0)};
  CrossTrainConfig cfg;
  cfg.steps = 0;
  cfg.rng_seed = 9;
  const CrossTrainResult r = train_binary_features(pos, neg, cfg);
  CHECK(r.model.params() == CrossModel::init(kNumInteractionFeatures, cfg.hidden, CrossMode::binary, 9).params());
  CHECK_THROWS_AS(train_binary_features({}, neg, cfg), ConfigError);
  CHECK_THROWS_AS(train_pairwise_features({}, cfg), ConfigError);
}

TEST_CASE("binary training separates the cosine toy set") {
  Rng rng(10);
  std::vector<FeatureVector> pos, neg;
  for (int i = 0; i < 40; ++i) pos.push_back(toy_features(rng, 1.0));
  for (int i = 0; i < 120; ++i) neg.push_back(toy_features(rng, 0.0));
  CrossTrainConfig cfg;
  cfg.rng_seed = 11;
  const CrossTrainResult r = train_binary_features(pos, neg, cfg);
  CHECK(r.loss_trace.size() == 500);
  CHECK(r.loss_trace.back() < r.loss_trace.front());
  for (const FeatureVector& f : pos) CHECK(score(r.model, f) > 0.0);
  for (const FeatureVector& f : neg) CHECK(score(r.model, f) < 0.0);

  // Raising a negative's cosine toward 1 raises its score.
  for (std::size_t i = 0; i < 10; ++i) {
    FeatureVector f = neg[i];
    double last = score(r.model, f);
    for (int step = 1; step <= 20; ++step) {
      f[kFeatCosine] = step / 20.0;
      const double s = score(r.model, f);
      CHECK(s > last);
      last = s;
    }
  }

  const CrossTrainResult again = train_binary_features(pos, neg, cfg);
  CHECK(again.model.params() == r.model.params());
}

TEST_CASE("pairwise training ranks every training positive first") {
  Rng rng(12);
  std::vector<FeatureTriple> triples;
  for (int i = 0; i < 60; ++i) {
    const double hi = 0.5 + 0.5 * rng.uniform();
    triples.push_back({toy_features(rng, hi), toy_features(rng, hi - 0.3 - 0.2 * rng.uniform())});
  }
  CrossTrainConfig cfg;
  cfg.rng_seed = 13;
  const CrossTrainResult r = train_pairwise_features(triples, cfg);
  CHECK(r.model.mode == CrossMode::pairwise);
  for (const FeatureTriple& t : triples) CHECK(score(r.model, t.pos) > score(r.model, t.neg));
}

TEST_CASE("a non-finite training loss names the step") {
  Rng rng(14);
  std::vector<FeatureVector> pos = {toy_features(rng, 1.0)}, neg = {toy_features(rng, 0.0)};
  neg[0][0] = std::numeric_limits<double>::quiet_NaN();
  CrossTrainConfig cfg;
  cfg.steps = 10;
  try {
    train_binary_features(pos, neg, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("non-finite learning rates are rejected") {
  Rng rng(15);
  const std::vector<FeatureVector> pos = {toy_features(rng, 1.0)}, neg = {toy_features(rng, 0.0)};
  CrossTrainConfig cfg;
  cfg.learning_rate = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(train_binary_features(pos, neg, cfg), ConfigError);
}

TEST_CASE("stratified negatives draw from the top decile and the whole list") {
  const auto idx = stratified_negative_indices(100, 5, 4, 4, 1);
  REQUIRE(idx.size() == 40);
  for (std::size_t p = 0; p < 5; ++p) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(idx[p * 8 + j] < 10);
    for (std::size_t j = 4; j < 8; ++j) CHECK(idx[p * 8 + j] < 100);
  }
  CHECK(idx == stratified_negative_indices(100, 5, 4, 4, 1));
  CHECK(stratified_negative_indices(0, 5, 4, 4, 1).empty());
}

TEST_CASE("rerank is a permutation then truncation") {
  Rng rng(15);
  TableSource src;
  std::vector<PairCandidate> cands;
  for (std::uint64_t i = 0; i < 50; ++i) {
    PairCandidate c{i, 100 + i, 0.5, 2.0 - 0.01 * static_cast<double>(i), std::nullopt, Stage::biencoder};
    src.table[pair_key(c.x_id, c.y_id)] = testing::random_features(rng, kNumInteractionFeatures);
    cands.push_back(c);
  }
  const CrossModel m = CrossModel::init(kNumInteractionFeatures, 8, CrossMode::binary, 2);
  const auto full = rerank(m, cands, src, 1000);
  REQUIRE(full.size() == cands.size());
  std::set<std::pair<std::uint64_t, std::uint64_t>> in, out;
  for (const auto& c : cands) in.emplace(c.x_id, c.y_id);
  for (const auto& c : full) {
    out.emplace(c.x_id, c.y_id);
    CHECK(c.stage == Stage::crossencoder);
    CHECK(c.cross_score.has_value());
  }
  CHECK(in == out);
  CHECK(std::is_sorted(full.begin(), full.end(), cross_order));
  const auto top = rerank(m, cands, src, 7);
  REQUIRE(top.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(top[i].y_id == full[i].y_id);
  CHECK(rerank(m, cands, src, 0).empty());
}

TEST_CASE("a constant model keeps the margin order") {
  Rng rng(16);
  TableSource src;
  std::vector<PairCandidate> cands;
  for (std::uint64_t i = 0; i < 30; ++i) {
    cands.push_back({i % 7, i, 0.1, rng.uniform(), std::nullopt, Stage::biencoder});
    src.table[pair_key(i % 7, i)] = testing::random_features(rng, kNumInteractionFeatures);
  }
  std::sort(cands.begin(), cands.end(), margin_order);
  const CrossModel zero = CrossModel::zeros(kNumInteractionFeatures, 16, CrossMode::binary);
  const auto out = rerank(zero, cands, src, 30);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    CHECK(out[i].x_id == cands[i].x_id);
    CHECK(out[i].y_id == cands[i].y_id);
  }
}

TEST_CASE("rerank reports unresolvable candidates") {
  TableSource src;
  const std::vector<PairCandidate> cands = {{1, 77, 0.1, 1.0, std::nullopt, Stage::biencoder}};
  const CrossModel zero = CrossModel::zeros(kNumInteractionFeatures, 4, CrossMode::binary);
  try {
    rerank(zero, cands, src, 1);
    FAIL("expected Error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("77") != std::string::npos);
  }
}

TEST_CASE("rerank lifts planted gold pairs above lexical traps") {
  // Gold pairs: moderate cosine, low bigram overlap. Traps: higher margin,
  // heavy bigram overlap. The seed set looks like gold.
  Rng rng(17);
  TableSource src;
  std::vector<PairCandidate> cands;
  auto gold_feats = [&] {
    FeatureVector f = toy_features(rng, 0.6 + 0.2 * rng.uniform());
    f[kFeatBigramPrecision] = 0.1 * rng.uniform();
    f[kFeatBigramRecall] = 0.1 * rng.uniform();
    return f;
  };
  auto trap_feats = [&] {
    FeatureVector f = toy_features(rng, 0.6 + 0.2 * rng.uniform());
    f[kFeatBigramPrecision] = 0.5 + 0.5 * rng.uniform();
    f[kFeatBigramRecall] = 0.4 + 0.5 * rng.uniform();
    return f;
  };
  for (std::uint64_t i = 0; i < 60; ++i) {
    cands.push_back({i, i, 0.7, 1.0 + rng.uniform(), std::nullopt, Stage::biencoder});
    src.table[pair_key(i, i)] = gold_feats();
    cands.push_back({i, 1000 + i, 0.7, 1.5 + rng.uniform(), std::nullopt, Stage::biencoder});
    src.table[pair_key(i, 1000 + i)] = trap_feats();
  }
  std::sort(cands.begin(), cands.end(), margin_order);
  std::vector<FeatureVector> pos, neg;
  for (int i = 0; i < 30; ++i) pos.push_back(gold_feats());
  for (std::size_t i : stratified_negative_indices(cands.size(), 30, 4, 4, 3)) {
    neg.push_back(src.candidate_features(cands[i]));
  }
  const CrossTrainResult r = train_binary_features(pos, neg, CrossTrainConfig{});
  const auto reranked = rerank(r.model, cands, src, cands.size());
  CHECK(gold_in_top(reranked, 50) >= gold_in_top(cands, 50));
  CHECK(gold_in_top(reranked, 50) > 40);
}

TEST_CASE("external scores drive the ordering") {
  const std::vector<PairCandidate> cands = {
      {1, 1, 0.5, 3.0, std::nullopt, Stage::biencoder},
      {2, 2, 0.5, 2.0, std::nullopt, Stage::biencoder},
      {3, 3, 0.5, 1.0, std::nullopt, Stage::biencoder},
  };
  const auto scores = import_scores(
      "{\"pair_key\":\"1:1\",\"score\":0.1}\n{\"pair_key\":\"2:2\",\"score\":0.9}\n"
      "{\"pair_key\":\"3:3\",\"score\":0.1}\n");
  const auto out = rerank_with_scores(cands, scores, 3);
  REQUIRE(out.size() == 3);
  CHECK(out[0].x_id == 2);
  CHECK(out[1].x_id == 1);
  CHECK(out[2].x_id == 3);
  CHECK(*out[0].cross_score == 0.9);

  std::map<std::string, double> partial = scores;
  partial.erase("3:3");
  CHECK_THROWS_AS(rerank_with_scores(cands, partial, 3), Error);
  CHECK_THROWS_AS(import_scores("{\"pair_key\":\"1:1\",\"score\":1}\n{\"pair_key\":\"1:1\",\"score\":2}\n"),
                  ParseError);
  CHECK_THROWS_AS(import_scores("{\"pair_key\":\"1:1\"}\n"), ParseError);

  const CorpusHandle xc({rec(1, "x one"), rec(2, "x two"), rec(3, "x three")}, Side::input);
  const CorpusHandle yc({rec(1, "y one", Side::output), rec(2, "y two", Side::output),
                         rec(3, "y three", Side::output)},
                        Side::output);
  const std::string exported = export_for_scoring(cands, xc, yc);
  CHECK(exported.substr(0, exported.find('\n')) ==
        "{\"pair_key\":\"1:1\",\"x_text\":\"x one\",\"y_text\":\"y one\"}");
}

TEST_CASE("crossencoder checkpoint round trip") {
  testing::ScratchDir dir("cross");
  CrossModel m = CrossModel::init(kNumInteractionFeatures, 5, CrossMode::pairwise, 21);
  m.b2 = 0.375;
  const std::string bytes = serialize_cross(m);
  CHECK(bytes.substr(0, 4) == "PMCX");
  CHECK(bytes.size() == 4 + 4 + 1 + 4 + 4 + 4 * m.params().size());
  save_cross(dir / "m.pmcx", m);
  const CrossModel back = load_cross(dir / "m.pmcx");
  CHECK(back.mode == CrossMode::pairwise);
  CHECK(back.input_dim() == kNumInteractionFeatures);
  CHECK(back.hidden() == 5);
  CHECK(back.b2 == 0.375);
  CHECK((back.w1 - m.w1).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(serialize_cross(back) == bytes);
  CHECK_THROWS_AS(deserialize_cross(bytes.substr(0, bytes.size() - 4)), ParseError);
  CHECK_THROWS_AS(deserialize_cross(bytes + "x"), ParseError);
}
