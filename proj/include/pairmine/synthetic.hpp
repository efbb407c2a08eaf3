#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pairmine/corpus.hpp"

namespace pairmine {

// Planted-pair corpora. Gold outputs copy floor(signal_overlap * output_len)
// tokens from scattered positions of their input, in shuffled order.
// Distractors copy floor(distractor_overlap * output_len) consecutive tokens
// from a random corpus or seed input, so they carry more shared bigrams than
// gold outputs.
struct SyntheticSpec {
  std::size_t num_pairs = 1000;
  std::size_t vocab_size = 20000;
  std::size_t input_len = 32;
  std::size_t output_len = 24;
  double signal_overlap = 0.6;
  std::size_t distractor_count = 5000;
  double distractor_overlap = 0.2;
  // Extra planted pairs kept out of both corpora, used as the seed set.
  std::size_t seed_pairs = 100;
  // Records are spread over this many consecutive days (meta "date").
  std::size_t num_days = 1;
  bool require_separable = false;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

SyntheticSpec preset(std::string_view name);  // "separable" or "lexical_trap"

using GoldPairs = std::map<RecordId, RecordId>;  // x_id -> gold y_id

struct SyntheticData {
  CorpusHandle inputs;
  CorpusHandle outputs;
  GoldPairs gold;
  std::vector<SeedExample> seed;
};

SyntheticData generate(const SyntheticSpec& spec);

// Seed file: one {"x_text", "y_text", "y_meta"?} object per line.
std::string seed_to_jsonl(const std::vector<SeedExample>& seed);
std::vector<SeedExample> seed_from_jsonl(std::string_view content, Task task,
                                         std::string_view what = "seed file");
std::vector<SeedExample> load_seed(const std::filesystem::path& path, Task task);

// Gold file: one {"x_id", "y_id"} object per line.
std::string gold_to_jsonl(const GoldPairs& gold);
GoldPairs gold_from_jsonl(std::string_view content, std::string_view what = "gold file");
GoldPairs load_gold(const std::filesystem::path& path);

// Writes inputs.jsonl, outputs.jsonl, seed.jsonl and gold.jsonl into dir.
void write_synthetic(const std::filesystem::path& dir, const SyntheticData& data);

}  // namespace pairmine
