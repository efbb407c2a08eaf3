#include <doctest.h>

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairmine/config.hpp"
#include "pairmine/error.hpp"
#include "pairmine/pipeline.hpp"
#include "pairmine/synthetic.hpp"
#include "pairmine/util.hpp"
#include "test_support.hpp"

using namespace pairmine;
namespace fs = std::filesystem;

namespace {

const char* kSmallModel =
    "bi.num_buckets = 4096\n"
    "bi.dim = 64\n"
    "bi.steps = 60\n"
    "cross.steps = 80\n"
    "prefilter.retention = 1.0\n"
    "final_top_n = 40\n";

SyntheticData small_data(std::uint64_t seed = 11) {
  SyntheticSpec s = preset("separable");
  s.num_pairs = 60;
  s.distractor_count = 100;
  s.seed_pairs = 30;
  s.num_days = 2;
  s.rng_seed = seed;
  return generate(s);
}

// Writes the data and a config next to it; paths in the config are relative.
PipelineConfig write_fixture(const fs::path& dir, const SyntheticData& d, const std::string& extra = "") {
  write_synthetic(dir, d);
  const std::string conf = std::string("inputs = inputs.jsonl\noutputs = outputs.jsonl\nseed = seed.jsonl\n") +
                           "gold = gold.jsonl\nworkdir = work\noutputs.decompose = false\n" +
                           "inputs.min_sentences = 0\n" + kSmallModel + extra;
  write_file_atomic(dir / "p.conf", conf);
  return PipelineConfig::from_flat(FlatConfig::load(dir / "p.conf"));
}

PipelineConfig with_workdir(PipelineConfig cfg, const fs::path& w) {
  cfg.workdir = w;
  return cfg;
}

std::string exported(const PipelineConfig& cfg) {
  return read_file(stage_dir(cfg, PipelineStage::export_dataset) / "mined.jsonl");
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    const std::size_t end = nl == std::string::npos ? text.size() : nl;
    if (end > start) out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

Record rec(RecordId id, std::string text, Side side) { return Record{id, std::move(text), side, {}}; }

std::string jsonl_record(RecordId id, const std::string& text, const std::string& date = "") {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["text"] = text;
  if (!date.empty()) j["meta"] = {{"date", date}};
  return j.dump() + "\n";
}

}  // namespace

TEST_CASE("run-all on a small synthetic corpus") {
  testing::ScratchDir dir("pipeline");
  const SyntheticData d = small_data();
  const PipelineConfig cfg = write_fixture(dir.path(), d);
  const std::vector<StageArtifact> arts = run_all(cfg);
  REQUIRE(arts.size() == 9);
  for (const StageArtifact& a : arts) CHECK(a.counters.conserved());
  CHECK(arts[0].counters.records_in == d.inputs.size() + d.outputs.size());
  CHECK(arts[3].info.at("shards") == 2.0);

  const MinedDataset ds = parse_mined_jsonl(exported(cfg));
  REQUIRE(!ds.pairs.empty());
  CHECK(ds.pairs.size() <= cfg.final_top_n);
  std::set<std::pair<RecordId, RecordId>> keys;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const MinedPair& p = ds.pairs[i];
    CHECK(p.rank == i + 1);
    CHECK(keys.emplace(p.x.id, p.y.id).second);
    CHECK(p.x.text == d.inputs.at(p.x.id).text);
    CHECK(p.y.text == d.outputs.at(p.y.id).text);
    CHECK_FALSE(verbatim_overlap(p.y.text, p.x.text));
    CHECK(p.margin > 0.0);
    if (i) CHECK(ds.pairs[i - 1].cross_score >= p.cross_score);
  }
  for (const std::string& line : lines_of(exported(cfg))) {
    CHECK(nlohmann::json::parse(line).at("mined").get<bool>());
  }

  const auto metrics = nlohmann::json::parse(read_file(stage_dir(cfg, PipelineStage::evaluate) / "metrics.json"));
  CHECK(metrics.at("gold_pairs").get<std::size_t>() == d.gold.size());
  const double r4 = metrics.at("biencoder").at("recall_at").at("4").at("value").get<double>();
  CHECK(r4 >= 0.0);
  CHECK(r4 <= 1.0);
  CHECK(fs::exists(stage_dir(cfg, PipelineStage::evaluate) / "rouge.json"));
}

TEST_CASE("runs are byte-identical and stages compose") {
  testing::ScratchDir dir("pipeline-det");
  const PipelineConfig cfg = write_fixture(dir.path(), small_data(12));
  const PipelineConfig a = with_workdir(cfg, dir / "a");
  const PipelineConfig b = with_workdir(cfg, dir / "b");
  const PipelineConfig c = with_workdir(cfg, dir / "c");
  run_all(a);
  run_all(b);
  for (PipelineStage s : run_all_stages(true)) run_stage(c, s);
  CHECK(exported(a) == exported(b));
  CHECK(exported(a) == exported(c));
  for (PipelineStage s : run_all_stages(true)) {
    CHECK(read_file(stage_dir(a, s) / "artifact.json") == read_file(stage_dir(b, s) / "artifact.json"));
  }

  const std::string before = read_file(stage_dir(a, PipelineStage::mine) / "candidates.jsonl");
  run_stage(a, PipelineStage::mine);
  CHECK(read_file(stage_dir(a, PipelineStage::mine) / "candidates.jsonl") == before);
}

TEST_CASE("missing and stale artifacts are reported") {
  testing::ScratchDir dir("pipeline-art");
  const PipelineConfig cfg = write_fixture(dir.path(), small_data(13));
  CHECK_THROWS_AS(run_stage(cfg, PipelineStage::mine), MissingArtifactError);
  for (PipelineStage s : {PipelineStage::ingest, PipelineStage::train_biencoder, PipelineStage::embed,
                          PipelineStage::index}) {
    run_stage(cfg, s);
  }
  verify_upstream(cfg, PipelineStage::mine);

  PipelineConfig changed = cfg;
  changed.retention = 0.5;
  CHECK_THROWS_AS(verify_upstream(changed, PipelineStage::index), StaleArtifactError);
  CHECK_THROWS_AS(run_stage(changed, PipelineStage::mine), StaleArtifactError);
  // Settings read only downstream leave upstream artifacts valid.
  changed = cfg;
  changed.margin.k = 6;
  changed.margin.top_per_input = 3;
  verify_upstream(changed, PipelineStage::mine);

  const fs::path vecs = stage_dir(cfg, PipelineStage::embed) / "y.pmv1";
  std::string bytes = read_file(vecs);
  bytes[bytes.size() - 1] ^= 0x01;
  write_file_atomic(vecs, bytes);
  CHECK_THROWS_AS(verify_upstream(cfg, PipelineStage::mine), StaleArtifactError);

  run_stage(cfg, PipelineStage::embed);
  run_stage(cfg, PipelineStage::index);
  fs::remove_all(stage_dir(cfg, PipelineStage::index));
  CHECK_THROWS_AS(run_stage(cfg, PipelineStage::mine), MissingArtifactError);

  run_stage(cfg, PipelineStage::index);
  write_file_atomic(dir / "seed.jsonl", read_file(dir / "seed.jsonl") + "{\"x_text\":\"a b\",\"y_text\":\"c d\"}\n");
  CHECK_THROWS_AS(run_stage(cfg, PipelineStage::mine), StaleArtifactError);
}

TEST_CASE("summarization ingest drops short inputs and decomposes outputs") {
  testing::ScratchDir dir("pipeline-sum");
  std::string inputs, outputs, seed;
  const std::vector<std::string> topics = {"river", "orchard", "harbor", "glacier", "market", "library"};
  for (std::size_t t = 0; t < topics.size(); ++t) {
    const std::string& w = topics[t];
    const std::string date = t % 2 ? "2020-01-02" : "2020-01-01";
    std::string doc;
    const std::size_t sentences = t == 0 ? 2 : 5;
    for (std::size_t s = 0; s < sentences; ++s) {
      doc += "The " + w + " story continues with " + w + " detail " + std::to_string(s) + ". ";
    }
    inputs += jsonl_record(t + 1, doc, date);
    outputs += jsonl_record(100 + t, "A " + w + " summary line. Another " + w + " remark follows here.", date);
    seed += nlohmann::json{{"x_text", doc}, {"y_text", "Summary about the " + w + "."}}.dump() + "\n";
  }
  write_file_atomic(dir / "in.jsonl", inputs);
  write_file_atomic(dir / "out.jsonl", outputs);
  write_file_atomic(dir / "seed.jsonl", seed);
  write_file_atomic(dir / "p.conf", std::string("inputs = in.jsonl\noutputs = out.jsonl\nseed = seed.jsonl\n") +
                                        "workdir = work\n" + kSmallModel);
  const PipelineConfig cfg = PipelineConfig::from_flat(FlatConfig::load(dir / "p.conf"));
  const std::vector<StageArtifact> arts = run_all(cfg);
  REQUIRE(arts.size() == 8);
  CHECK(arts[0].info.at("short_inputs_dropped") == 1.0);
  CHECK(arts[0].info.at("input_records") == 5.0);
  CHECK(arts[0].info.at("output_records") == 12.0);
  const fs::path ingested = stage_dir(cfg, PipelineStage::ingest);
  const CorpusHandle xs = ingest_jsonl(ingested / "inputs.jsonl", Side::input).corpus;
  const CorpusHandle ys = ingest_jsonl(ingested / "outputs.jsonl", Side::output).corpus;
  const MinedDataset ds = parse_mined_jsonl(exported(cfg));
  REQUIRE(!ds.pairs.empty());
  for (const MinedPair& p : ds.pairs) {
    CHECK(p.x.id != 1);
    const Record& y = ys.at(p.y.id);
    CHECK(y.meta.count(meta_keys::source_doc_id) == 1);
    CHECK(xs.at(p.x.id).meta.at("date") == y.meta.at("date"));
  }
}

TEST_CASE("reading comprehension pipeline exports answer spans") {
  testing::ScratchDir dir("pipeline-rc");
  const std::vector<std::string> first = {"Alice", "Bruno", "Chiara", "Dmitri", "Elena", "Farid",
                                          "Greta", "Hiro", "Ines", "Jonas", "Kira", "Liam"};
  const std::vector<std::string> city = {"Paris", "Lagos", "Quito", "Oslo", "Hanoi", "Perth",
                                         "Lima", "Cairo", "Dublin", "Seoul", "Vienna", "Boston"};
  std::string inputs, outputs, seed;
  for (std::size_t i = 0; i < first.size(); ++i) {
    const std::string name = first[i] + " Walker";
    const std::string passage = name + " was born in " + city[i] + " in " + std::to_string(1950 + i) +
                                ". " + name + " studied painting for many years.";
    outputs += jsonl_record(500 + i, passage);
    const std::string question = "Where was " + name + " born?";
    if (i < 8) {
      inputs += jsonl_record(i + 1, question);
    } else {
      seed += nlohmann::json{{"x_text", question},
                             {"y_text", passage},
                             {"y_meta", {{"answer_text", city[i]}}}}
                  .dump() +
              "\n";
    }
  }
  write_file_atomic(dir / "q.jsonl", inputs);
  write_file_atomic(dir / "p.jsonl", outputs);
  write_file_atomic(dir / "seed.jsonl", seed);
  write_file_atomic(dir / "rc.conf", std::string("task = rc\ninputs = q.jsonl\noutputs = p.jsonl\n") +
                                         "seed = seed.jsonl\nworkdir = work\n" + kSmallModel);
  const PipelineConfig cfg = PipelineConfig::from_flat(FlatConfig::load(dir / "rc.conf"));
  CHECK(cfg.cross_mode == CrossMode::binary);
  run_all(cfg);
  const MinedDataset ds = parse_mined_jsonl(exported(cfg));
  REQUIRE(!ds.pairs.empty());
  for (const MinedPair& p : ds.pairs) {
    REQUIRE(p.y.answer_span().has_value());
    const std::string answer = *p.y.answer();
    CHECK_FALSE(verbatim_overlap(answer, p.x.text));
  }
}

TEST_CASE("dataset export") {
  const CorpusHandle xs({rec(1, "first input", Side::input), rec(2, "second input", Side::input)}, Side::input);
  std::vector<Record> ys = {rec(10, "output ten", Side::output), rec(11, "output eleven", Side::output),
                            rec(12, "Ann met Bob", Side::output)};
  ys[2].set_answer_span(Span{0, 3});
  const CorpusHandle yc(ys, Side::output);
  const std::vector<PairCandidate> ranked = {{2, 12, 0.5, 1.5, 3.0, Stage::crossencoder},
                                             {1, 10, 0.7, 1.2, 2.0, Stage::crossencoder},
                                             {1, 11, 0.6, 1.1, -1.0, Stage::crossencoder}};
  const MinedDataset ds = build_dataset(ranked, xs, yc);
  REQUIRE(ds.pairs.size() == 3);
  const std::string text = export_jsonl(ds);
  const std::vector<std::string> lines = lines_of(text);
  REQUIRE(lines.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto j = nlohmann::json::parse(lines[i]);
    CHECK(j.at("rank").get<std::size_t>() == i + 1);
    CHECK(j.at("mined").get<bool>());
  }
  const auto first_line = nlohmann::json::parse(lines[0]);
  CHECK(first_line.at("answer_span").at("begin").get<std::size_t>() == 0);
  CHECK(first_line.at("answer_span").at("end").get<std::size_t>() == 3);
  CHECK_FALSE(nlohmann::json::parse(lines[1]).contains("answer_span"));
  CHECK(export_jsonl(parse_mined_jsonl(text)) == text);
  CHECK_THROWS_AS(export_jsonl(MinedDataset{}), Error);
  const std::vector<PairCandidate> unknown = {{3, 10, 0.1, 1.0, 0.0, Stage::crossencoder}};
  CHECK_THROWS_AS(build_dataset(unknown, xs, yc), Error);
}

TEST_CASE("retrieval metrics") {
  GoldPairs gold;
  std::vector<PairCandidate> ranked;
  // Gold pairs fill alternate slots of the top 20.
  for (std::uint64_t i = 0; i < 20; ++i) {
    if (i % 2 == 0) {
      gold[i] = 1000 + i;
      ranked.push_back({i, 1000 + i, 0.9, 2.0 - 0.01 * i, std::nullopt, Stage::biencoder});
    } else {
      ranked.push_back({i, 5000 + i, 0.9, 2.0 - 0.01 * i, std::nullopt, Stage::biencoder});
    }
  }
  const std::vector<std::size_t> ks = {1}, ns = {20, 10};
  const Metrics m = evaluate(ranked, gold, ks, ns);
  CHECK(m.precision_at.at(20) == Ratio{1, 2});
  CHECK(m.precision_at.at(10) == Ratio{1, 2});
  CHECK(m.recall_at.at(1) == Ratio{1, 1});

  GoldPairs missing = {{1, 42}, {2, 43}};
  const Metrics none = evaluate(ranked, missing, ks, ns);
  CHECK(none.recall_at.at(1) == Ratio{0, 1});
  CHECK(none.precision_at.at(20) == Ratio{0, 1});

  // The gold output in second place for its input counts for k = 2 only.
  const std::vector<PairCandidate> two = {{7, 1, 0.9, 2.0, std::nullopt, Stage::biencoder},
                                          {7, 2, 0.8, 1.5, std::nullopt, Stage::biencoder}};
  const GoldPairs g7 = {{7, 2}};
  const std::vector<std::size_t> k12 = {1, 2};
  const Metrics m7 = evaluate(two, g7, k12, {});
  CHECK(m7.recall_at.at(1) == Ratio{0, 1});
  CHECK(m7.recall_at.at(2) == Ratio{1, 1});
  CHECK_THROWS_AS(evaluate(ranked, GoldPairs{}, ks, ns), Error);

  const auto j = nlohmann::json::parse(metrics_to_json(m));
  CHECK(j.at("precision_at").at("20").at("num").get<int>() == 1);
  CHECK(j.at("precision_at").at("20").at("den").get<int>() == 2);
}

TEST_CASE("artifact json round trip") {
  StageArtifact a;
  a.stage = "mine";
  a.config_hash = "00ff";
  a.inputs["ingest/inputs.jsonl"] = "abc";
  a.outputs["candidates.jsonl"] = "def";
  a.counters = {10, 6, 3, 1};
  a.info["shards"] = 2.0;
  const std::string text = artifact_to_json(a);
  const StageArtifact b = artifact_from_json(text);
  CHECK(artifact_to_json(b) == text);
  CHECK(b.counters.conserved());
  CHECK_THROWS_AS(artifact_from_json("{}"), ParseError);
}
