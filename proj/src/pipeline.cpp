#include "pairmine/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pairmine/error.hpp"
#include "pairmine/text.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kArtifactFile = "artifact.json";

const std::vector<std::pair<PipelineStage, std::string_view>>& stage_names() {
  static const std::vector<std::pair<PipelineStage, std::string_view>> names = {
      {PipelineStage::ingest, "ingest"},
      {PipelineStage::train_biencoder, "train_biencoder"},
      {PipelineStage::embed, "embed"},
      {PipelineStage::index, "index"},
      {PipelineStage::mine, "mine"},
      {PipelineStage::train_cross, "train_cross"},
      {PipelineStage::filter, "filter"},
      {PipelineStage::export_dataset, "export"},
      {PipelineStage::evaluate, "evaluate"},
  };
  return names;
}

std::vector<std::size_t> parse_size_list(const FlatConfig& flat, std::string_view key,
                                         std::vector<std::size_t> fallback) {
  const auto v = flat.get(key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    std::size_t n = 0;
    const char* first = b == std::string::npos ? item.data() : item.data() + b;
    const char* last = b == std::string::npos ? item.data() : item.data() + e + 1;
    const auto [p, ec] = std::from_chars(first, last, n);
    if (ec != std::errc() || p != last || n == 0) {
      throw ConfigError("config key '" + std::string(key) + "': expected a comma-separated list of positive integers");
    }
    out.push_back(n);
  }
  if (out.empty()) throw ConfigError("config key '" + std::string(key) + "' is empty");
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t x : v) {
    if (!out.empty()) out += ',';
    out += std::to_string(x);
  }
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

// Loaded outputs of the ingest stage.
struct Corpora {
  CorpusHandle x;
  CorpusHandle y;
  std::vector<SeedExample> seed;
};

Corpora load_corpora(const PipelineConfig& cfg) {
  const fs::path dir = stage_dir(cfg, PipelineStage::ingest);
  Corpora c;
  c.x = ingest_jsonl(dir / "inputs.jsonl", Side::input).corpus;
  c.y = ingest_jsonl(dir / "outputs.jsonl", Side::output).corpus;
  c.seed = load_seed(dir / "seed.jsonl", cfg.task);
  return c;
}

struct Biencoder {
  BiencoderModel model;
  PrefilterModel prefilter;
};

Biencoder load_biencoder_stage(const PipelineConfig& cfg) {
  Biencoder b;
  load_biencoder(stage_dir(cfg, PipelineStage::train_biencoder) / "model.pmbi", b.model, b.prefilter);
  return b;
}

std::vector<PairCandidate> load_candidates(const fs::path& path) {
  return candidates_from_jsonl(read_file(path), path.string());
}

// Accumulates outputs and writes the artifact last, so a stage directory only
// carries an artifact once every output is in place.
class StageWriter {
 public:
  StageWriter(const PipelineConfig& cfg, PipelineStage stage) : cfg_(cfg), dir_(stage_dir(cfg, stage)) {
    art_.stage = std::string(stage_name(stage));
    art_.config_hash = stage_config_hash(cfg, stage);
    fs::create_directories(dir_);
    std::error_code ec;
    fs::remove(dir_ / kArtifactFile, ec);
  }

  void input_file(const fs::path& path) {
    const fs::path rel = fs::relative(path, cfg_.workdir);
    art_.inputs[rel.generic_string()] = hex64(hash_file(path));
  }
  void raw_input(std::string_view name, const fs::path& path) {
    art_.inputs["raw:" + std::string(name)] = hex64(hash_file(path));
  }
  void write(const std::string& name, std::string_view bytes) {
    write_file_atomic(dir_ / name, bytes);
    art_.outputs[name] = hex64(fnv1a64(bytes));
  }
  StageCounters& counters() { return art_.counters; }
  void info(const std::string& key, double v) { art_.info[key] = v; }
  const fs::path& dir() const { return dir_; }

  StageArtifact finish() {
    if (!art_.counters.conserved()) {
      throw Error("stage " + art_.stage + ": counters are not conserved");
    }
    write_file_atomic(dir_ / kArtifactFile, artifact_to_json(art_));
    return art_;
  }

 private:
  const PipelineConfig& cfg_;
  fs::path dir_;
  StageArtifact art_;
};

std::optional<fs::path> raw_path(const PipelineConfig& cfg, std::string_view name) {
  if (name == "inputs") return cfg.inputs;
  if (name == "outputs") return cfg.outputs;
  if (name == "seed") return cfg.seed;
  if (name == "gold") return cfg.gold;
  if (name == "external_scores") return cfg.external_scores;
  return std::nullopt;
}

void log_line(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

// ---- stages ---------------------------------------------------------------

StageArtifact stage_ingest(const PipelineConfig& cfg, const Logger& log) {
  StageWriter w(cfg, PipelineStage::ingest);
  w.raw_input("inputs", cfg.inputs);
  w.raw_input("outputs", cfg.outputs);
  w.raw_input("seed", cfg.seed);
  const IngestResult xs = ingest_jsonl(cfg.inputs, Side::input);
  const IngestResult ys = ingest_jsonl(cfg.outputs, Side::output);
  const CorpusHandle x = filter_min_sentences(xs.corpus, cfg.min_input_sentences);
  CorpusHandle y = cfg.decompose_outputs ? decompose_outputs(ys.corpus, cfg.task) : ys.corpus;
  const std::vector<SeedExample> seed = load_seed(cfg.seed, cfg.task);
  if (seed.empty()) throw Error("seed file " + cfg.seed.string() + " has no examples");
  w.write("inputs.jsonl", corpus_to_jsonl(x));
  w.write("outputs.jsonl", corpus_to_jsonl(y));
  w.write("seed.jsonl", seed_to_jsonl(seed));
  auto& c = w.counters();
  c.records_in = xs.lines_read + ys.lines_read;
  c.filtered = xs.skipped_empty + ys.skipped_empty + (xs.corpus.size() - x.size());
  c.records_out = x.size() + ys.corpus.size();
  w.info("input_records", static_cast<double>(x.size()));
  w.info("short_inputs_dropped", static_cast<double>(xs.corpus.size() - x.size()));
  w.info("output_records", static_cast<double>(y.size()));
  w.info("seed_examples", static_cast<double>(seed.size()));
  log_line(log, "ingest: " + std::to_string(x.size()) + " inputs, " +
                    std::to_string(y.size()) + " outputs, " + std::to_string(seed.size()) + " seed pairs");
  return w.finish();
}

StageArtifact stage_train_biencoder(const PipelineConfig& cfg, const Logger& log) {
  StageWriter w(cfg, PipelineStage::train_biencoder);
  const fs::path in = stage_dir(cfg, PipelineStage::ingest);
  for (const char* f : {"inputs.jsonl", "outputs.jsonl", "seed.jsonl"}) w.input_file(in / f);
  const Corpora c = load_corpora(cfg);
  TrainOptions opts;
  opts.shape = cfg.shape;
  opts.synthetic_per_type = cfg.synthetic_per_type;
  if (cfg.task == Task::reading_comprehension) opts.input_corpus = &c.x;
  TrainConfig tc = cfg.bi;
  tc.rng_seed = derive_seed(cfg.rng_seed, "biencoder");
  const TrainResult r = train(c.seed, c.y, tc, opts);
  w.write("model.pmbi", serialize_biencoder(r.model, r.prefilter));

  ordered_json side;
  side["num_buckets"] = r.model.num_buckets;
  side["dim"] = r.model.dim;
  side["rng_seed"] = tc.rng_seed;
  side["learning_rate"] = tc.learning_rate;
  side["steps"] = tc.steps;
  side["batch_size"] = tc.batch_size;
  side["n_random_negs"] = tc.n_random_negs;
  side["multitask_weight"] = tc.multitask_weight;
  side["prefilter_trained"] = r.prefilter_trained;
  side["synthetic_negatives"] = r.synthetic_negatives;
  side["synthetic_warnings"] = r.synthetic_warnings;
  ordered_json trace = ordered_json::array();
  for (const StepLoss& s : r.loss_trace) trace.push_back({s.total, s.nll, s.prefilter});
  side["loss_trace"] = trace;
  w.write("model.json", side.dump(1) + "\n");

  auto& k = w.counters();
  k.records_in = k.records_out = c.seed.size();
  if (!r.loss_trace.empty()) {
    w.info("loss_first", r.loss_trace.front().total);
    w.info("loss_last", r.loss_trace.back().total);
  }
  w.info("synthetic_warnings", static_cast<double>(r.synthetic_warnings));
  log_line(log, "train_biencoder: " + std::to_string(tc.steps) + " steps" +
                    (r.loss_trace.empty() ? std::string()
                                          : ", loss " + fmt_double(r.loss_trace.front().total) + " -> " +
                                                fmt_double(r.loss_trace.back().total)));
  return w.finish();
}

StageArtifact stage_embed(const PipelineConfig& cfg, const Logger& log) {
  StageWriter w(cfg, PipelineStage::embed);
  const fs::path in = stage_dir(cfg, PipelineStage::ingest);
  w.input_file(in / "inputs.jsonl");
  w.input_file(in / "outputs.jsonl");
  w.input_file(stage_dir(cfg, PipelineStage::train_biencoder) / "model.pmbi");
  const Corpora c = load_corpora(cfg);
  const Biencoder b = load_biencoder_stage(cfg);

  struct Embedded {
    std::vector<std::optional<UnitVector>> vecs;
    std::size_t failed = 0;
  };
  auto embed_corpus = [&](const CorpusHandle& corpus) {
    Embedded e;
    e.vecs.resize(corpus.size());
    parallel_chunks(corpus.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        const Record& r = corpus.records()[i];
        try {
          e.vecs[i] = embed(b.model, featurize(encoder_text(r), b.model.num_buckets));
        } catch (const UnembeddableError&) {
          e.vecs[i].reset();
        }
      }
    });
    for (const auto& v : e.vecs) e.failed += !v.has_value();
    return e;
  };
  const Embedded ex = embed_corpus(c.x);
  const Embedded ey = embed_corpus(c.y);

  // The prefilter scores outputs for summarization and inputs (questions) for
  // reading comprehension.
  const bool filter_inputs = cfg.task == Task::reading_comprehension;
  const Embedded& pf_side = filter_inputs ? ex : ey;
  std::vector<std::size_t> candidates;
  std::vector<double> scores;
  for (std::size_t i = 0; i < pf_side.vecs.size(); ++i) {
    if (!pf_side.vecs[i]) continue;
    candidates.push_back(i);
    scores.push_back(prefilter_from_vector(b.prefilter, *pf_side.vecs[i]));
  }
  std::vector<bool> keep(pf_side.vecs.size(), false);
  double threshold = 0.0;
  if (!scores.empty()) {
    const std::vector<std::size_t> kept = select_top_fraction(scores, cfg.retention);
    threshold = 1.0;
    for (std::size_t k : kept) {
      keep[candidates[k]] = true;
      threshold = std::min(threshold, scores[k]);
    }
  }
  auto to_store = [&](const CorpusHandle& corpus, const Embedded& e, bool prefiltered) {
    VectorStore store(b.model.dim);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (!e.vecs[i] || (prefiltered && !keep[i])) continue;
      store.add(corpus.records()[i].id, *e.vecs[i]);
    }
    return store;
  };
  const VectorStore xs = to_store(c.x, ex, filter_inputs);
  const VectorStore ys = to_store(c.y, ey, !filter_inputs);
  w.write("x.pmv1", serialize_vectors(xs));
  w.write("y.pmv1", serialize_vectors(ys));

  auto& k = w.counters();
  k.records_in = c.x.size() + c.y.size();
  k.degenerate = ex.failed + ey.failed;
  k.records_out = xs.size() + ys.size();
  k.filtered = k.records_in - k.degenerate - k.records_out;
  w.info("prefilter_threshold", threshold);
  w.info("x_vectors", static_cast<double>(xs.size()));
  w.info("y_vectors", static_cast<double>(ys.size()));
  log_line(log, "embed: " + std::to_string(xs.size()) + " input and " + std::to_string(ys.size()) +
                    " output vectors (" + std::to_string(k.filtered) + " prefiltered, " +
                    std::to_string(k.degenerate) + " unembeddable)");
  return w.finish();
}

struct ShardEntry {
  std::string key;
  std::optional<std::string> x_file;
  std::optional<std::string> y_file;
  std::size_t x_count = 0;
  std::size_t y_count = 0;
};

std::vector<ShardEntry> load_shards(const PipelineConfig& cfg) {
  const fs::path path = stage_dir(cfg, PipelineStage::index) / "shards.json";
  std::vector<ShardEntry> out;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    for (const auto& s : j.at("shards")) {
      ShardEntry e;
      e.key = s.at("key").get<std::string>();
      if (s.contains("x_file")) e.x_file = s.at("x_file").get<std::string>();
      if (s.contains("y_file")) e.y_file = s.at("y_file").get<std::string>();
      e.x_count = s.at("x_count").get<std::size_t>();
      e.y_count = s.at("y_count").get<std::size_t>();
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return out;
}

StageArtifact stage_index(const PipelineConfig& cfg, const Logger& log) {
  StageWriter w(cfg, PipelineStage::index);
  const fs::path in = stage_dir(cfg, PipelineStage::ingest);
  const fs::path emb = stage_dir(cfg, PipelineStage::embed);
  w.input_file(in / "inputs.jsonl");
  w.input_file(in / "outputs.jsonl");
  w.input_file(emb / "x.pmv1");
  w.input_file(emb / "y.pmv1");
  const Corpora c = load_corpora(cfg);
  const VectorStore xv = load_vectors(emb / "x.pmv1");
  const VectorStore yv = load_vectors(emb / "y.pmv1");

  // shard key -> (x ids, y ids), restricted to embedded records.
  std::map<std::string, std::pair<std::vector<std::uint64_t>, std::vector<std::uint64_t>>> shards;
  auto assign = [&](const CorpusHandle& corpus, const VectorStore& store, bool is_x) {
    if (!cfg.sharded()) {
      auto& slot = shards["_all"];
      (is_x ? slot.first : slot.second) = store.ids();
      return;
    }
    for (const Shard& s : shard_by_key(corpus, cfg.shard_key, date_bucket(cfg.shard_granularity))) {
      auto& slot = shards[s.key_value];
      auto& ids = is_x ? slot.first : slot.second;
      for (RecordId id : s.record_ids) {
        if (store.index_of(id) >= 0) ids.push_back(id);
      }
    }
  };
  assign(c.x, xv, true);
  assign(c.y, yv, false);

  std::vector<ShardEntry> entries;
  std::vector<std::pair<std::string, const std::vector<std::uint64_t>*>> jobs;
  for (const auto& [key, ids] : shards) {
    ShardEntry e;
    e.key = key;
    e.x_count = ids.first.size();
    e.y_count = ids.second.size();
    const std::string stem = "shard-" + std::to_string(entries.size());
    if (!ids.first.empty()) {
      e.x_file = stem + ".x.pmix";
      jobs.emplace_back(*e.x_file, &ids.first);
    }
    if (!ids.second.empty()) {
      e.y_file = stem + ".y.pmix";
      jobs.emplace_back(*e.y_file, &ids.second);
    }
    entries.push_back(std::move(e));
  }

  std::vector<std::string> blobs(jobs.size());
  parallel_chunks(jobs.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t j = lo; j < hi; ++j) {
      const bool is_x = jobs[j].first.find(".x.") != std::string::npos;
      VectorStore sub = (is_x ? xv : yv).select(*jobs[j].second);
      const auto n = static_cast<std::uint32_t>(sub.size());
      std::uint32_t nlist = 1;
      if (cfg.index_kind == IndexKind::ivf) {
        nlist = cfg.nlist == 0 ? static_cast<std::uint32_t>(std::lround(std::sqrt(static_cast<double>(n))))
                               : cfg.nlist;
        nlist = std::clamp<std::uint32_t>(nlist, 1, n);
      }
      blobs[j] = Index::build(std::move(sub), cfg.index_kind, nlist,
                              derive_seed(cfg.rng_seed, "index:" + jobs[j].first))
                     .serialize();
    }
  }, 1);
  for (std::size_t j = 0; j < jobs.size(); ++j) w.write(jobs[j].first, blobs[j]);

  ordered_json manifest;
  ordered_json arr = ordered_json::array();
  for (const ShardEntry& e : entries) {
    ordered_json s;
    s["key"] = e.key;
    if (e.x_file) s["x_file"] = *e.x_file;
    if (e.y_file) s["y_file"] = *e.y_file;
    s["x_count"] = e.x_count;
    s["y_count"] = e.y_count;
    arr.push_back(s);
  }
  manifest["shards"] = arr;
  w.write("shards.json", manifest.dump(1) + "\n");

  auto& k = w.counters();
  k.records_in = xv.size() + yv.size();
  for (const ShardEntry& e : entries) k.records_out += e.x_count + e.y_count;
  k.filtered = k.records_in - k.records_out;
  w.info("shards", static_cast<double>(entries.size()));
  log_line(log, "index: " + std::to_string(entries.size()) + " shard(s), " +
                    std::to_string(k.records_out) + " vectors indexed");
  return w.finish();
}

OverlapFilter make_overlap_filter(const PipelineConfig& cfg, const Corpora& c) {
  if (!cfg.overlap_filter) return {};
  if (cfg.task == Task::summarization) {
    return [&c](std::uint64_t x, std::uint64_t y) {
      return verbatim_overlap(c.y.at(y).text, c.x.at(x).text);
    };
  }
  return [&c](std::uint64_t x, std::uint64_t y) {
    const auto answer = c.y.at(y).answer();
    return answer && verbatim_overlap(*answer, c.x.at(x).text);
  };
}

StageArtifact stage_mine(const PipelineConfig& cfg, const Logger& log) {
  StageWriter w(cfg, PipelineStage::mine);
  const fs::path in = stage_dir(cfg, PipelineStage::ingest);
  const fs::path idx_dir = stage_dir(cfg, PipelineStage::index);
  w.input_file(in / "inputs.jsonl");
  w.input_file(in / "outputs.jsonl");
  w.input_file(idx_dir / "shards.json");
  const Corpora c = load_corpora(cfg);
  const std::vector<ShardEntry> shards = load_shards(cfg);
  const OverlapFilter overlap = make_overlap_filter(cfg, c);

  MarginConfig mc = cfg.margin;
  mc.max_candidates = std::numeric_limits<std::size_t>::max();
  std::vector<PairCandidate> all;
  MineStats total;
  std::size_t mined_shards = 0;
  for (const ShardEntry& s : shards) {
    if (!s.x_file || !s.y_file) continue;
    w.input_file(idx_dir / *s.x_file);
    w.input_file(idx_dir / *s.y_file);
    const Index xi = load_index(idx_dir / *s.x_file);
    const Index yi = load_index(idx_dir / *s.y_file);
    MineResult r = mine(xi.store(), yi.store(), xi, yi, mc, overlap);
    total.pairs_considered += r.stats.pairs_considered;
    total.overlap_filtered += r.stats.overlap_filtered;
    total.degenerate += r.stats.degenerate;
    total.truncated += r.stats.truncated;
    all.insert(all.end(), r.candidates.begin(), r.candidates.end());
    ++mined_shards;
  }
  std::sort(all.begin(), all.end(), margin_order);
  if (all.size() > cfg.margin.max_candidates) {
    total.truncated += all.size() - cfg.margin.max_candidates;
    all.resize(cfg.margin.max_candidates);
  }
  w.write("candidates.jsonl", candidates_to_jsonl(all));
  w.write("pairs_for_scoring.jsonl", export_for_scoring(all, c.x, c.y));

  auto& k = w.counters();
  k.records_in = total.pairs_considered;
  k.filtered = total.overlap_filtered + total.truncated;
  k.degenerate = total.degenerate;
  k.records_out = all.size();
  w.info("overlap_filtered", static_cast<double>(total.overlap_filtered));
  w.info("truncated", static_cast<double>(total.truncated));
  w.info("shards_mined", static_cast<double>(mined_shards));
  w.info("shards_skipped", static_cast<double>(shards.size() - mined_shards));
  log_line(log, "mine: " + std::to_string(all.size()) + " candidates from " +
                    std::to_string(mined_shards) + " shard(s) (" + std::to_string(total.overlap_filtered) +
                    " overlap-filtered, " + std::to_string(total.degenerate) + " degenerate)");
  return w.finish();
}

struct Vectors {
  VectorStore x;
  VectorStore y;
};

Vectors load_embed_stage(const PipelineConfig& cfg) {
  const fs::path emb = stage_dir(cfg, PipelineStage::embed);
  return Vectors{load_vectors(emb / "x.pmv1"), load_vectors(emb / "y.pmv1")};
}

StageArtifact stage_train_cross(const PipelineConfig& cfg, const Logger& log) {
  StageWriter w(cfg, PipelineStage::train_cross);
  if (cfg.external_scores) {
    w.info("external_scores", 1.0);
    log_line(log, "train_cross: external scores configured, nothing to train");
    return w.finish();
  }
  const fs::path in = stage_dir(cfg, PipelineStage::ingest);
  const fs::path emb = stage_dir(cfg, PipelineStage::embed);
  const fs::path mined = stage_dir(cfg, PipelineStage::mine) / "candidates.jsonl";
  for (const char* f : {"inputs.jsonl", "outputs.jsonl", "seed.jsonl"}) w.input_file(in / f);
  w.input_file(stage_dir(cfg, PipelineStage::train_biencoder) / "model.pmbi");
  w.input_file(emb / "x.pmv1");
  w.input_file(emb / "y.pmv1");
  w.input_file(mined);

  const Corpora c = load_corpora(cfg);
  const Biencoder b = load_biencoder_stage(cfg);
  const Vectors v = load_embed_stage(cfg);
  const EncoderFeatureSource source(c.x, c.y, v.x, v.y, b.model);
  CrossTrainConfig tc = cfg.cross;
  tc.rng_seed = derive_seed(cfg.rng_seed, "cross");

  CrossTrainResult r;
  std::size_t used = c.seed.size(), skipped = 0, examples = 0;
  if (cfg.cross_mode == CrossMode::binary) {
    const std::vector<PairCandidate> cands = load_candidates(mined);
    if (cands.empty()) throw Error("train_cross: the mine stage produced no candidates to use as negatives");
    std::vector<PairCandidate> negs;
    for (std::size_t i : stratified_negative_indices(cands.size(), c.seed.size(), cfg.negatives_top_decile,
                                                     cfg.negatives_uniform, tc.rng_seed)) {
      negs.push_back(cands[i]);
    }
    examples = negs.size();
    r = train_binary(c.seed, negs, source, tc);
  } else {
    const Index yi = Index::build(v.y, IndexKind::exact);
    TripleBuild tb = build_rank_triples(c.seed, b.model, yi, c.y, cfg.hard_negatives);
    skipped = tb.skipped_documents;
    used -= skipped;
    if (skipped > 0) {
      log_line(log, "warning: " + std::to_string(skipped) + " seed document(s) had no retrievable negative and were skipped");
    }
    if (tb.triples.empty()) throw Error("train_cross: no seed document has a retrievable negative");
    examples = tb.triples.size();
    r = train_pairwise(tb.triples, source, tc);
  }
  w.write("model.pmcx", serialize_cross(r.model));
  ordered_json side;
  side["mode"] = std::string(to_string(cfg.cross_mode));
  side["hidden"] = tc.hidden;
  side["learning_rate"] = tc.learning_rate;
  side["steps"] = tc.steps;
  side["rng_seed"] = tc.rng_seed;
  side["training_examples"] = examples;
  side["loss_trace"] = r.loss_trace;
  w.write("model.json", side.dump(1) + "\n");

  auto& k = w.counters();
  k.records_in = c.seed.size();
  k.records_out = used;
  k.filtered = skipped;
  w.info("training_examples", static_cast<double>(examples));
  if (!r.loss_trace.empty()) {
    w.info("loss_first", r.loss_trace.front());
    w.info("loss_last", r.loss_trace.back());
  }
  log_line(log, "train_cross: " + std::string(to_string(cfg.cross_mode)) + " on " +
                    std::to_string(examples) + " examples" +
                    (r.loss_trace.empty() ? std::string()
                                          : ", loss " + fmt_double(r.loss_trace.front()) + " -> " +
                                                fmt_double(r.loss_trace.back())));
  return w.finish();
}

StageArtifact stage_filter(const PipelineConfig& cfg, const Logger& log) {
  StageWriter w(cfg, PipelineStage::filter);
  const fs::path mined = stage_dir(cfg, PipelineStage::mine) / "candidates.jsonl";
  w.input_file(mined);
  const std::vector<PairCandidate> cands = load_candidates(mined);
  std::vector<PairCandidate> ranked;
  if (cfg.external_scores) {
    w.raw_input("external_scores", *cfg.external_scores);
    const auto scores = import_scores(read_file(*cfg.external_scores), cfg.external_scores->string());
    ranked = rerank_with_scores(cands, scores, cfg.final_top_n);
  } else {
    const fs::path in = stage_dir(cfg, PipelineStage::ingest);
    const fs::path emb = stage_dir(cfg, PipelineStage::embed);
    const fs::path model_path = stage_dir(cfg, PipelineStage::train_cross) / "model.pmcx";
    w.input_file(in / "inputs.jsonl");
    w.input_file(in / "outputs.jsonl");
    w.input_file(stage_dir(cfg, PipelineStage::train_biencoder) / "model.pmbi");
    w.input_file(emb / "x.pmv1");
    w.input_file(emb / "y.pmv1");
    w.input_file(model_path);
    const Corpora c = load_corpora(cfg);
    const Biencoder b = load_biencoder_stage(cfg);
    const Vectors v = load_embed_stage(cfg);
    const CrossModel model = load_cross(model_path);
    const EncoderFeatureSource source(c.x, c.y, v.x, v.y, b.model);
    ranked = rerank(model, cands, source, cfg.final_top_n);
  }
  w.write("reranked.jsonl", candidates_to_jsonl(ranked));
  auto& k = w.counters();
  k.records_in = cands.size();
  k.records_out = ranked.size();
  k.filtered = cands.size() - ranked.size();
  log_line(log, "filter: kept " + std::to_string(ranked.size()) + " of " + std::to_string(cands.size()) +
                    " candidates");
  return w.finish();
}

StageArtifact stage_export(const PipelineConfig& cfg, const Logger& log) {
  StageWriter w(cfg, PipelineStage::export_dataset);
  const fs::path in = stage_dir(cfg, PipelineStage::ingest);
  const fs::path reranked = stage_dir(cfg, PipelineStage::filter) / "reranked.jsonl";
  w.input_file(in / "inputs.jsonl");
  w.input_file(in / "outputs.jsonl");
  w.input_file(reranked);
  const Corpora c = load_corpora(cfg);
  const std::vector<PairCandidate> ranked = load_candidates(reranked);
  const MinedDataset ds = build_dataset(ranked, c.x, c.y);
  w.write("mined.jsonl", export_jsonl(ds));
  auto& k = w.counters();
  k.records_in = k.records_out = ds.pairs.size();
  log_line(log, "export: " + std::to_string(ds.pairs.size()) + " pairs -> " +
                    (w.dir() / "mined.jsonl").string());
  return w.finish();
}

std::vector<ScoredPair> top_pairs(std::span<const PairCandidate> ranked, std::size_t n, Stage stage,
                                  const Corpora& c) {
  std::vector<ScoredPair> out;
  for (std::size_t i = 0; i < std::min(n, ranked.size()); ++i) {
    const PairCandidate& p = ranked[i];
    out.push_back(ScoredPair{p.x_id, p.y_id, c.x.at(p.x_id).text, c.y.at(p.y_id).text, stage});
  }
  return out;
}

StageArtifact stage_evaluate(const PipelineConfig& cfg, const Logger& log) {
  if (!cfg.gold) throw ConfigError("evaluate needs a gold file (config key 'gold')");
  StageWriter w(cfg, PipelineStage::evaluate);
  const fs::path in = stage_dir(cfg, PipelineStage::ingest);
  const fs::path mined = stage_dir(cfg, PipelineStage::mine) / "candidates.jsonl";
  const fs::path reranked = stage_dir(cfg, PipelineStage::filter) / "reranked.jsonl";
  w.raw_input("gold", *cfg.gold);
  w.input_file(in / "inputs.jsonl");
  w.input_file(in / "outputs.jsonl");
  w.input_file(mined);
  w.input_file(reranked);
  const Corpora c = load_corpora(cfg);
  const GoldPairs gold = load_gold(*cfg.gold);
  const std::vector<PairCandidate> bi = load_candidates(mined);
  const std::vector<PairCandidate> cross = load_candidates(reranked);

  const Metrics mb = evaluate(bi, gold, cfg.eval_recall_at, cfg.eval_precision_at);
  const Metrics mc = evaluate(cross, gold, cfg.eval_recall_at, cfg.eval_precision_at);
  ordered_json m;
  m["gold_pairs"] = gold.size();
  m["biencoder"] = nlohmann::ordered_json::parse(metrics_to_json(mb));
  m["crossencoder"] = nlohmann::ordered_json::parse(metrics_to_json(mc));
  w.write("metrics.json", m.dump(2) + "\n");

  std::vector<ScoredPair> pairs = top_pairs(bi, cfg.eval_rouge_top_n, Stage::biencoder, c);
  const std::vector<ScoredPair> cp = top_pairs(cross, cfg.eval_rouge_top_n, Stage::crossencoder, c);
  pairs.insert(pairs.end(), cp.begin(), cp.end());
  if (!pairs.empty()) w.write("rouge.json", report_to_json(abstractiveness_report(pairs)));

  auto& k = w.counters();
  k.records_in = k.records_out = gold.size();
  for (const auto& [n, r] : mb.recall_at) w.info("biencoder_recall@" + std::to_string(n), r.value());
  for (const auto& [n, r] : mb.precision_at) w.info("biencoder_precision@" + std::to_string(n), r.value());
  for (const auto& [n, r] : mc.recall_at) w.info("crossencoder_recall@" + std::to_string(n), r.value());
  for (const auto& [n, r] : mc.precision_at) w.info("crossencoder_precision@" + std::to_string(n), r.value());
  std::string summary = "evaluate:";
  for (const auto& [n, r] : mb.recall_at) summary += " recall@" + std::to_string(n) + "=" + fmt_double(r.value());
  for (const auto& [n, r] : mb.precision_at) {
    summary += " precision@" + std::to_string(n) + " biencoder=" + fmt_double(r.value()) +
               " crossencoder=" + fmt_double(mc.precision_at.at(n).value());
  }
  log_line(log, summary);
  return w.finish();
}

}  // namespace

// ---- names and config -----------------------------------------------------

std::string_view stage_name(PipelineStage stage) {
  for (const auto& [s, n] : stage_names()) {
    if (s == stage) return n;
  }
  return "unknown";
}

PipelineStage parse_pipeline_stage(std::string_view name) {
  std::string n(name);
  std::replace(n.begin(), n.end(), '-', '_');
  for (const auto& [s, sn] : stage_names()) {
    if (sn == n) return s;
  }
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

std::vector<PipelineStage> run_all_stages(bool with_evaluate) {
  std::vector<PipelineStage> out = {PipelineStage::ingest, PipelineStage::train_biencoder,
                                    PipelineStage::embed,  PipelineStage::index,
                                    PipelineStage::mine,   PipelineStage::train_cross,
                                    PipelineStage::filter, PipelineStage::export_dataset};
  if (with_evaluate) out.push_back(PipelineStage::evaluate);
  return out;
}

PipelineConfig PipelineConfig::from_flat(const FlatConfig& f) {
  static const std::set<std::string, std::less<>> known = {
      "task", "inputs", "outputs", "seed", "gold", "workdir", "outputs.decompose",
      "inputs.min_sentences",
      "shard.key", "shard.granularity",
      "bi.learning_rate", "bi.steps", "bi.batch_size", "bi.random_negatives",
      "bi.multitask_weight", "bi.num_buckets", "bi.dim", "bi.synthetic_per_type",
      "cross.mode", "cross.learning_rate", "cross.steps", "cross.hidden",
      "cross.negatives_top_decile", "cross.negatives_uniform", "cross.hard_negatives",
      "cross.external_scores",
      "margin.k", "margin.top_per_input", "margin.max_candidates", "margin.nprobe",
      "index.kind", "index.nlist", "prefilter.retention", "final_top_n", "overlap_filter",
      "eval.recall_at", "eval.precision_at", "eval.rouge_top_n", "rng_seed"};
  f.reject_unknown(known);

  PipelineConfig c;
  c.task = parse_task(f.get_string("task", "sum"));
  auto required_path = [&](std::string_view key) {
    auto p = f.get_path(key);
    if (!p) throw ConfigError("config key '" + std::string(key) + "' is required");
    return *p;
  };
  c.inputs = required_path("inputs");
  c.outputs = required_path("outputs");
  c.seed = required_path("seed");
  c.gold = f.get_path("gold");
  c.workdir = f.get_path("workdir").value_or(f.base_dir() / "work");
  c.decompose_outputs = f.get_bool("outputs.decompose", true);
  c.min_input_sentences = static_cast<std::size_t>(
      f.get_u64("inputs.min_sentences", c.task == Task::summarization ? 4 : 0));
  c.shard_key = f.get_string("shard.key", "date");
  c.shard_granularity = f.get_string("shard.granularity", "day");

  c.shape.num_buckets = static_cast<std::uint32_t>(f.get_u64("bi.num_buckets", kDefaultNumBuckets));
  c.shape.dim = static_cast<std::uint32_t>(f.get_u64("bi.dim", kDefaultDim));
  c.bi.learning_rate = f.get_double("bi.learning_rate", c.bi.learning_rate);
  c.bi.steps = static_cast<int>(f.get_int("bi.steps", c.bi.steps));
  c.bi.batch_size = static_cast<int>(f.get_int("bi.batch_size", c.bi.batch_size));
  c.bi.n_random_negs = static_cast<int>(f.get_int("bi.random_negatives", c.bi.n_random_negs));
  c.bi.multitask_weight = f.get_double("bi.multitask_weight", c.bi.multitask_weight);
  c.synthetic_per_type = static_cast<int>(f.get_int("bi.synthetic_per_type", c.synthetic_per_type));

  c.cross_mode = parse_cross_mode(
      f.get_string("cross.mode", c.task == Task::reading_comprehension ? "binary" : "pairwise"));
  c.cross.learning_rate = f.get_double("cross.learning_rate", c.cross.learning_rate);
  c.cross.steps = static_cast<int>(f.get_int("cross.steps", c.cross.steps));
  c.cross.hidden = static_cast<std::size_t>(f.get_u64("cross.hidden", c.cross.hidden));
  c.negatives_top_decile = static_cast<std::size_t>(f.get_u64("cross.negatives_top_decile", 4));
  c.negatives_uniform = static_cast<std::size_t>(f.get_u64("cross.negatives_uniform", 4));
  c.hard_negatives = static_cast<std::size_t>(f.get_u64("cross.hard_negatives", 4));
  c.external_scores = f.get_path("cross.external_scores");

  c.margin.k = static_cast<std::size_t>(f.get_u64("margin.k", c.margin.k));
  c.margin.top_per_input = static_cast<std::size_t>(f.get_u64("margin.top_per_input", c.margin.top_per_input));
  const std::uint64_t cap = f.get_u64("margin.max_candidates", 0);
  c.margin.max_candidates = cap == 0 ? std::numeric_limits<std::size_t>::max() : static_cast<std::size_t>(cap);
  c.margin.nprobe = static_cast<std::uint32_t>(f.get_u64("margin.nprobe", c.margin.nprobe));
  c.index_kind = parse_index_kind(f.get_string("index.kind", "exact"));
  c.nlist = static_cast<std::uint32_t>(f.get_u64("index.nlist", 0));

  c.retention = f.get_double("prefilter.retention", c.retention);
  c.final_top_n = static_cast<std::size_t>(f.get_u64("final_top_n", c.final_top_n));
  c.overlap_filter = f.get_bool("overlap_filter", true);
  c.eval_recall_at = parse_size_list(f, "eval.recall_at", c.eval_recall_at);
  c.eval_precision_at = parse_size_list(f, "eval.precision_at", c.eval_precision_at);
  c.eval_rouge_top_n = static_cast<std::size_t>(f.get_u64("eval.rouge_top_n", c.eval_rouge_top_n));
  c.rng_seed = f.get_u64("rng_seed", 0);
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  if (!(retention > 0.0 && retention <= 1.0)) throw ConfigError("prefilter.retention must be in (0, 1]");
  if (final_top_n < 1) throw ConfigError("final_top_n must be >= 1");
  if (!is_power_of_two(shape.num_buckets)) throw ConfigError("bi.num_buckets must be a power of two");
  if (shape.dim < 1) throw ConfigError("bi.dim must be >= 1");
  if (!(bi.learning_rate > 0.0)) throw ConfigError("bi.learning_rate must be > 0");
  if (bi.steps < 0) throw ConfigError("bi.steps must be >= 0");
  if (bi.batch_size < 1) throw ConfigError("bi.batch_size must be >= 1");
  if (bi.n_random_negs < 0) throw ConfigError("bi.random_negatives must be >= 0");
  if (bi.multitask_weight < 0.0) throw ConfigError("bi.multitask_weight must be >= 0");
  if (synthetic_per_type < 0) throw ConfigError("bi.synthetic_per_type must be >= 0");
  if (!(cross.learning_rate > 0.0)) throw ConfigError("cross.learning_rate must be > 0");
  if (cross.steps < 0) throw ConfigError("cross.steps must be >= 0");
  if (cross.hidden < 1) throw ConfigError("cross.hidden must be >= 1");
  if (hard_negatives < 1) throw ConfigError("cross.hard_negatives must be >= 1");
  if (negatives_top_decile + negatives_uniform < 1) throw ConfigError("binary training needs negatives per positive");
  margin.validate();
  if (sharded()) date_bucket(shard_granularity);
}

bool PipelineConfig::sharded() const {
  return task == Task::summarization && !shard_key.empty();
}

std::string stage_config_text(const PipelineConfig& c, PipelineStage stage) {
  std::string out;
  auto kv = [&out](std::string_view k, const std::string& v) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  };
  kv("stage", std::string(stage_name(stage)));
  kv("task", std::string(to_string(c.task)));
  switch (stage) {
    case PipelineStage::ingest:
      kv("outputs.decompose", c.decompose_outputs ? "true" : "false");
      kv("inputs.min_sentences", std::to_string(c.min_input_sentences));
      break;
    case PipelineStage::train_biencoder:
      kv("bi.num_buckets", std::to_string(c.shape.num_buckets));
      kv("bi.dim", std::to_string(c.shape.dim));
      kv("bi.learning_rate", fmt_double(c.bi.learning_rate));
      kv("bi.steps", std::to_string(c.bi.steps));
      kv("bi.batch_size", std::to_string(c.bi.batch_size));
      kv("bi.random_negatives", std::to_string(c.bi.n_random_negs));
      kv("bi.multitask_weight", fmt_double(c.bi.multitask_weight));
      kv("bi.synthetic_per_type", std::to_string(c.synthetic_per_type));
      kv("rng_seed", std::to_string(c.rng_seed));
      break;
    case PipelineStage::embed:
      kv("prefilter.retention", fmt_double(c.retention));
      break;
    case PipelineStage::index:
      kv("shard.key", c.sharded() ? c.shard_key : "");
      kv("shard.granularity", c.sharded() ? c.shard_granularity : "");
      kv("index.kind", c.index_kind == IndexKind::ivf ? "ivf" : "exact");
      kv("index.nlist", std::to_string(c.nlist));
      kv("rng_seed", std::to_string(c.rng_seed));
      break;
    case PipelineStage::mine:
      kv("margin.k", std::to_string(c.margin.k));
      kv("margin.top_per_input", std::to_string(c.margin.top_per_input));
      kv("margin.max_candidates", std::to_string(c.margin.max_candidates));
      kv("margin.nprobe", std::to_string(c.margin.nprobe));
      kv("overlap_filter", c.overlap_filter ? "true" : "false");
      break;
    case PipelineStage::train_cross:
      kv("cross.external", c.external_scores ? "true" : "false");
      kv("cross.mode", std::string(to_string(c.cross_mode)));
      kv("cross.learning_rate", fmt_double(c.cross.learning_rate));
      kv("cross.steps", std::to_string(c.cross.steps));
      kv("cross.hidden", std::to_string(c.cross.hidden));
      kv("cross.negatives_top_decile", std::to_string(c.negatives_top_decile));
      kv("cross.negatives_uniform", std::to_string(c.negatives_uniform));
      kv("cross.hard_negatives", std::to_string(c.hard_negatives));
      kv("rng_seed", std::to_string(c.rng_seed));
      break;
    case PipelineStage::filter:
      kv("cross.external", c.external_scores ? "true" : "false");
      kv("final_top_n", std::to_string(c.final_top_n));
      break;
    case PipelineStage::export_dataset:
      break;
    case PipelineStage::evaluate:
      kv("eval.recall_at", join_sizes(c.eval_recall_at));
      kv("eval.precision_at", join_sizes(c.eval_precision_at));
      kv("eval.rouge_top_n", std::to_string(c.eval_rouge_top_n));
      break;
  }
  return out;
}

std::string stage_config_hash(const PipelineConfig& cfg, PipelineStage stage) {
  return hex64(fnv1a64(stage_config_text(cfg, stage)));
}

// ---- artifacts ------------------------------------------------------------

std::string artifact_to_json(const StageArtifact& a) {
  ordered_json j;
  j["stage"] = a.stage;
  j["config_hash"] = a.config_hash;
  ordered_json in = ordered_json::object();
  for (const auto& [k, v] : a.inputs) in[k] = v;
  j["inputs"] = in;
  ordered_json out = ordered_json::object();
  for (const auto& [k, v] : a.outputs) out[k] = v;
  j["outputs"] = out;
  j["counters"] = {{"records_in", a.counters.records_in},
                   {"records_out", a.counters.records_out},
                   {"filtered", a.counters.filtered},
                   {"degenerate", a.counters.degenerate}};
  ordered_json info = ordered_json::object();
  for (const auto& [k, v] : a.info) info[k] = v;
  j["info"] = info;
  return j.dump(2) + "\n";
}

StageArtifact artifact_from_json(std::string_view content, std::string_view what) {
  try {
    const auto j = nlohmann::json::parse(content);
    StageArtifact a;
    a.stage = j.at("stage").get<std::string>();
    a.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& [k, v] : j.at("inputs").items()) a.inputs[k] = v.get<std::string>();
    for (const auto& [k, v] : j.at("outputs").items()) a.outputs[k] = v.get<std::string>();
    const auto& c = j.at("counters");
    a.counters.records_in = c.at("records_in").get<std::uint64_t>();
    a.counters.records_out = c.at("records_out").get<std::uint64_t>();
    a.counters.filtered = c.at("filtered").get<std::uint64_t>();
    a.counters.degenerate = c.at("degenerate").get<std::uint64_t>();
    if (j.contains("info")) {
      for (const auto& [k, v] : j.at("info").items()) a.info[k] = v.get<double>();
    }
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

fs::path stage_dir(const PipelineConfig& cfg, PipelineStage stage) {
  return cfg.workdir / std::string(stage_name(stage));
}

std::optional<StageArtifact> read_artifact(const PipelineConfig& cfg, PipelineStage stage) {
  const fs::path p = stage_dir(cfg, stage) / kArtifactFile;
  if (!fs::exists(p)) return std::nullopt;
  return artifact_from_json(read_file(p), p.string());
}

std::vector<PipelineStage> stage_dependencies(const PipelineConfig& cfg, PipelineStage stage) {
  using S = PipelineStage;
  switch (stage) {
    case S::ingest:
      return {};
    case S::train_biencoder:
      return {S::ingest};
    case S::embed:
      return {S::ingest, S::train_biencoder};
    case S::index:
      return {S::ingest, S::embed};
    case S::mine:
      return {S::ingest, S::index};
    case S::train_cross:
      if (cfg.external_scores) return {};
      return {S::ingest, S::train_biencoder, S::embed, S::mine};
    case S::filter:
      if (cfg.external_scores) return {S::mine};
      return {S::ingest, S::train_biencoder, S::embed, S::mine, S::train_cross};
    case S::export_dataset:
      return {S::ingest, S::filter};
    case S::evaluate:
      return {S::ingest, S::mine, S::filter};
  }
  return {};
}

void verify_upstream(const PipelineConfig& cfg, PipelineStage stage) {
  std::vector<PipelineStage> todo = stage_dependencies(cfg, stage);
  std::set<PipelineStage> seen;
  while (!todo.empty()) {
    const PipelineStage dep = todo.back();
    todo.pop_back();
    if (!seen.insert(dep).second) continue;
    const std::string name(stage_name(dep));
    const fs::path dir = stage_dir(cfg, dep);
    const auto art = read_artifact(cfg, dep);
    if (!art) {
      throw MissingArtifactError("missing artifact for stage '" + name + "' (" +
                                 (dir / kArtifactFile).string() + "); run '" + name + "' first");
    }
    if (art->config_hash != stage_config_hash(cfg, dep)) {
      throw StaleArtifactError("stage '" + name + "' was produced under a different configuration; rerun it");
    }
    for (const auto& [file, hash] : art->outputs) {
      const fs::path p = dir / file;
      if (!fs::exists(p)) {
        throw MissingArtifactError("stage '" + name + "' output " + p.string() + " is missing");
      }
      if (hex64(hash_file(p)) != hash) {
        throw StaleArtifactError("stage '" + name + "' output " + p.string() + " changed after it was written");
      }
    }
    for (const auto& [key, hash] : art->inputs) {
      fs::path p;
      if (key.rfind("raw:", 0) == 0) {
        const auto rp = raw_path(cfg, std::string_view(key).substr(4));
        if (!rp) {
          throw StaleArtifactError("stage '" + name + "' read " + key + ", which is no longer configured");
        }
        p = *rp;
      } else {
        p = cfg.workdir / key;
      }
      if (!fs::exists(p)) throw MissingArtifactError("stage '" + name + "' input " + p.string() + " is missing");
      if (hex64(hash_file(p)) != hash) {
        throw StaleArtifactError("stage '" + name + "' is stale: its input " + p.string() +
                                 " has changed; rerun '" + name + "'");
      }
    }
    for (PipelineStage up : stage_dependencies(cfg, dep)) todo.push_back(up);
  }
}

StageArtifact run_stage(const PipelineConfig& cfg, PipelineStage stage, const Logger& log) {
  verify_upstream(cfg, stage);
  switch (stage) {
    case PipelineStage::ingest:
      return stage_ingest(cfg, log);
    case PipelineStage::train_biencoder:
      return stage_train_biencoder(cfg, log);
    case PipelineStage::embed:
      return stage_embed(cfg, log);
    case PipelineStage::index:
      return stage_index(cfg, log);
    case PipelineStage::mine:
      return stage_mine(cfg, log);
    case PipelineStage::train_cross:
      return stage_train_cross(cfg, log);
    case PipelineStage::filter:
      return stage_filter(cfg, log);
    case PipelineStage::export_dataset:
      return stage_export(cfg, log);
    case PipelineStage::evaluate:
      return stage_evaluate(cfg, log);
  }
  throw Error("unknown stage");
}

std::vector<StageArtifact> run_all(const PipelineConfig& cfg, const Logger& log) {
  std::vector<StageArtifact> out;
  for (PipelineStage s : run_all_stages(cfg.gold.has_value())) out.push_back(run_stage(cfg, s, log));
  return out;
}

// ---- dataset export -------------------------------------------------------

MinedDataset build_dataset(std::span<const PairCandidate> ranked, const CorpusHandle& x_corpus,
                           const CorpusHandle& y_corpus) {
  MinedDataset ds;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const PairCandidate& c = ranked[i];
    if (!c.cross_score) {
      throw Error("pair " + pair_key(c.x_id, c.y_id) + " has no crossencoder score");
    }
    ds.pairs.push_back(MinedPair{x_corpus.at(c.x_id), y_corpus.at(c.y_id), c.cosine, c.margin,
                                 *c.cross_score, i + 1});
  }
  return ds;
}

std::string export_jsonl(const MinedDataset& ds) {
  if (ds.pairs.empty()) throw Error("export: the mined dataset is empty");
  std::string out;
  for (const MinedPair& p : ds.pairs) {
    ordered_json j;
    j["x_id"] = p.x.id;
    j["y_id"] = p.y.id;
    j["x_text"] = p.x.text;
    j["y_text"] = p.y.text;
    if (const auto span = p.y.answer_span()) {
      j["answer_span"] = {{"begin", span->begin},
                          {"end", span->end},
                          {"text", p.y.answer().value_or("")}};
    }
    j["cosine"] = p.cosine;
    j["margin"] = p.margin;
    j["cross_score"] = p.cross_score;
    j["mined"] = true;
    j["rank"] = p.rank;
    out += j.dump();
    out += '\n';
  }
  return out;
}

MinedDataset parse_mined_jsonl(std::string_view content, std::string_view what) {
  MinedDataset ds;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      MinedPair p;
      p.x = Record{j.at("x_id").get<RecordId>(), j.at("x_text").get<std::string>(), Side::input, {}};
      p.y = Record{j.at("y_id").get<RecordId>(), j.at("y_text").get<std::string>(), Side::output, {}};
      if (j.contains("answer_span")) {
        const auto& s = j.at("answer_span");
        p.y.set_answer_span(Span{s.at("begin").get<std::size_t>(), s.at("end").get<std::size_t>()});
      }
      p.cosine = j.at("cosine").get<double>();
      p.margin = j.at("margin").get<double>();
      p.cross_score = j.at("cross_score").get<double>();
      if (!j.at("mined").get<bool>()) throw ParseError("mined flag is false");
      p.rank = j.at("rank").get<std::size_t>();
      ds.pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string(what) + ": line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(std::string(what) + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

void export_dataset(const MinedDataset& ds, const fs::path& path) {
  const std::string bytes = export_jsonl(ds);
  try {
    write_file_atomic(path, bytes);
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot write ") + path.string() + ": " + e.what());
  }
}

// ---- evaluation -----------------------------------------------------------

Metrics evaluate(std::span<const PairCandidate> ranked, const GoldPairs& gold,
                 std::span<const std::size_t> ks, std::span<const std::size_t> ns) {
  if (gold.empty()) throw Error("evaluate: gold set is empty");
  Metrics m;
  // Rank of the gold output within each gold input's candidate list, 1-based.
  std::map<RecordId, std::size_t> seen_per_x;
  std::map<RecordId, std::size_t> gold_rank;
  for (const PairCandidate& c : ranked) {
    const std::size_t r = ++seen_per_x[c.x_id];
    auto g = gold.find(c.x_id);
    if (g != gold.end() && g->second == c.y_id && !gold_rank.count(c.x_id)) gold_rank[c.x_id] = r;
  }
  for (std::size_t k : ks) {
    std::uint64_t hits = 0;
    for (const auto& [x, r] : gold_rank) hits += r <= k;
    m.recall_at[k] = Ratio::of(hits, gold.size());
  }
  for (std::size_t n : ns) {
    if (n == 0) throw Error("evaluate: precision@0 is undefined");
    std::uint64_t hits = 0;
    for (std::size_t i = 0; i < std::min(n, ranked.size()); ++i) {
      auto g = gold.find(ranked[i].x_id);
      hits += g != gold.end() && g->second == ranked[i].y_id;
    }
    m.precision_at[n] = Ratio::of(hits, n);
  }
  return m;
}

std::string metrics_to_json(const Metrics& m) {
  ordered_json j;
  auto block = [](const std::map<std::size_t, Ratio>& vals) {
    ordered_json b = ordered_json::object();
    for (const auto& [n, r] : vals) {
      b[std::to_string(n)] = {{"value", r.value()}, {"num", r.num}, {"den", r.den}};
    }
    return b;
  };
  j["recall_at"] = block(m.recall_at);
  j["precision_at"] = block(m.precision_at);
  return j.dump(2);
}

}  // namespace pairmine
