#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pairmine/config.hpp"
#include "pairmine/corpus.hpp"
#include "pairmine/crossfilter.hpp"
#include "pairmine/encoder.hpp"
#include "pairmine/knn_index.hpp"
#include "pairmine/miner.hpp"
#include "pairmine/rouge.hpp"
#include "pairmine/synthetic.hpp"

namespace pairmine {

enum class PipelineStage {
  ingest,
  train_biencoder,
  embed,
  index,
  mine,
  train_cross,
  filter,
  export_dataset,
  evaluate
};

std::string_view stage_name(PipelineStage stage);  // directory name, e.g. "train_biencoder"
// Accepts stage names with '_' or '-' ("train-cross"), plus "export".
PipelineStage parse_pipeline_stage(std::string_view name);
// Stages run-all executes, in order. evaluate is appended when a gold file is set.
std::vector<PipelineStage> run_all_stages(bool with_evaluate);

struct PipelineConfig {
  Task task = Task::summarization;
  std::filesystem::path inputs;
  std::filesystem::path outputs;
  std::filesystem::path seed;
  std::optional<std::filesystem::path> gold;
  std::filesystem::path workdir = "work";
  bool decompose_outputs = true;
  // Input documents with fewer sentences are dropped at ingest. Defaults to 4
  // for summarization and 0 for reading comprehension.
  std::size_t min_input_sentences = 4;

  // Summarization only; reading comprehension always mines one global shard.
  std::string shard_key = "date";
  std::string shard_granularity = "day";

  EncoderShape shape;
  TrainConfig bi;
  int synthetic_per_type = 2;

  CrossMode cross_mode = CrossMode::pairwise;
  CrossTrainConfig cross;
  std::size_t negatives_top_decile = 4;
  std::size_t negatives_uniform = 4;
  std::size_t hard_negatives = 4;
  std::optional<std::filesystem::path> external_scores;

  MarginConfig margin;
  IndexKind index_kind = IndexKind::exact;
  std::uint32_t nlist = 0;  // 0 picks round(sqrt(n)) per shard

  double retention = 0.2;
  std::size_t final_top_n = 500;
  bool overlap_filter = true;

  std::vector<std::size_t> eval_recall_at = {1, 4, 10};
  std::vector<std::size_t> eval_precision_at = {100};
  std::size_t eval_rouge_top_n = 100;

  std::uint64_t rng_seed = 0;

  // Keys default per task: cross.mode is binary for reading comprehension and
  // pairwise for summarization.
  static PipelineConfig from_flat(const FlatConfig& flat);
  void validate() const;
  bool sharded() const;
};

// Canonical "key=value" lines of the settings one stage depends on.
std::string stage_config_text(const PipelineConfig& cfg, PipelineStage stage);
std::string stage_config_hash(const PipelineConfig& cfg, PipelineStage stage);

// Counters obey records_out + filtered + degenerate == records_in.
struct StageCounters {
  std::uint64_t records_in = 0;
  std::uint64_t records_out = 0;
  std::uint64_t filtered = 0;
  std::uint64_t degenerate = 0;

  bool conserved() const { return records_out + filtered + degenerate == records_in; }
};

struct StageArtifact {
  std::string stage;
  std::string config_hash;
  // Keys are workdir-relative paths or "raw:<name>" for configured source files.
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;  // stage-dir-relative file -> hash
  StageCounters counters;
  std::map<std::string, double> info;
};

std::string artifact_to_json(const StageArtifact& a);
StageArtifact artifact_from_json(std::string_view content, std::string_view what = "artifact");

std::filesystem::path stage_dir(const PipelineConfig& cfg, PipelineStage stage);
std::optional<StageArtifact> read_artifact(const PipelineConfig& cfg, PipelineStage stage);

// Direct prerequisites of a stage under this config.
std::vector<PipelineStage> stage_dependencies(const PipelineConfig& cfg, PipelineStage stage);

// Checks every transitive upstream artifact: present (else
// MissingArtifactError), produced under the current config and with its
// recorded input and output hashes matching the files on disk (else
// StaleArtifactError).
void verify_upstream(const PipelineConfig& cfg, PipelineStage stage);

using Logger = std::function<void(std::string_view)>;

StageArtifact run_stage(const PipelineConfig& cfg, PipelineStage stage, const Logger& log = {});
std::vector<StageArtifact> run_all(const PipelineConfig& cfg, const Logger& log = {});

// Final exported pairs, in crossencoder order.
struct MinedPair {
  Record x;
  Record y;
  double cosine = 0.0;
  double margin = 0.0;
  double cross_score = 0.0;
  std::size_t rank = 0;
};

struct MinedDataset {
  std::vector<MinedPair> pairs;
};

MinedDataset build_dataset(std::span<const PairCandidate> ranked, const CorpusHandle& x_corpus,
                           const CorpusHandle& y_corpus);
// One object per line: x_id, y_id, x_text, y_text, answer_span?, cosine,
// margin, cross_score, mined, rank. Throws Error for an empty dataset.
std::string export_jsonl(const MinedDataset& ds);
MinedDataset parse_mined_jsonl(std::string_view content, std::string_view what = "mined dataset");
void export_dataset(const MinedDataset& ds, const std::filesystem::path& path);

struct Metrics {
  std::map<std::size_t, Ratio> recall_at;
  std::map<std::size_t, Ratio> precision_at;
};

// recall@k: share of gold inputs whose gold output is among the first k
// candidates listed for that input. precision@N: gold pairs among the first N
// of the global ranking, over N. Throws Error for empty gold.
Metrics evaluate(std::span<const PairCandidate> ranked, const GoldPairs& gold,
                 std::span<const std::size_t> ks, std::span<const std::size_t> ns);
std::string metrics_to_json(const Metrics& m);

}  // namespace pairmine
