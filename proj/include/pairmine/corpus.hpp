#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pairmine {

using RecordId = std::uint64_t;

enum class Side { input, output };
enum class Task { reading_comprehension, summarization };

std::string_view to_string(Side side);
std::string_view to_string(Task task);
Task parse_task(std::string_view name);

// Character (code point) offsets into Record::text, half-open.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

namespace meta_keys {
inline constexpr std::string_view date = "date";
inline constexpr std::string_view source_doc_id = "source_doc_id";
inline constexpr std::string_view answer_span = "answer_span";
inline constexpr std::string_view answer_text = "answer_text";
inline constexpr std::string_view answer_type = "answer_type";
}  // namespace meta_keys

struct Record {
  RecordId id = 0;
  std::string text;
  Side side = Side::input;
  std::map<std::string, std::string, std::less<>> meta;

  std::optional<Span> answer_span() const;
  void set_answer_span(Span span);
  // The answer string: meta "answer_text" if present, else the spanned text.
  std::optional<std::string> answer() const;
};

// Text the biencoder sees for a record. For reading-comprehension outputs this
// is the answer followed by the passage.
std::string encoder_text(const Record& record);

// Immutable, id-ordered collection of records from one side.
class CorpusHandle {
 public:
  CorpusHandle() = default;
  // Sorts by id; throws ParseError on duplicate ids or mixed sides.
  CorpusHandle(std::vector<Record> records, Side side,
               std::optional<std::string> shard_key = std::nullopt);

  const std::vector<Record>& records() const { return records_; }
  Side side() const { return side_; }
  const std::optional<std::string>& shard_key() const { return shard_key_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const Record* find(RecordId id) const;
  const Record& at(RecordId id) const;  // throws Error naming the id

 private:
  std::vector<Record> records_;
  Side side_ = Side::input;
  std::optional<std::string> shard_key_;
};

struct Shard {
  std::string key_value;
  std::vector<RecordId> record_ids;
};

inline constexpr std::string_view kUnkeyedShard = "_unkeyed";

struct SeedExample {
  Record x;
  Record y;
  Task task = Task::summarization;
};

struct IngestResult {
  CorpusHandle corpus;
  std::size_t lines_read = 0;
  std::size_t skipped_empty = 0;
};

// One record per JSONL line: {"text": str, "meta"?: {str: str}, "id"?: uint}.
IngestResult ingest_jsonl(const std::filesystem::path& path, Side side,
                          RecordId id_offset = 0);
IngestResult ingest_jsonl_string(std::string_view content, Side side,
                                 RecordId id_offset = 0,
                                 std::string_view source_name = "<memory>");

// Inverse of ingest_jsonl: one {"id","text","meta"} object per line.
std::string corpus_to_jsonl(const CorpusHandle& corpus);

// Maps a raw key value to its shard bucket. Identity by default.
using ShardBucketFn = std::function<std::string(std::string_view)>;

// Truncates ISO-8601 dates: "day" keeps YYYY-MM-DD, "month" YYYY-MM, "year" YYYY.
ShardBucketFn date_bucket(std::string_view granularity);

std::vector<Shard> shard_by_key(const CorpusHandle& corpus, std::string_view key,
                                const ShardBucketFn& bucket = {});

struct SpotterConfig {
  bool capitalized = true;
  bool numbers = true;
  // Case-folded capitalized words that never start or form a span on their
  // own (sentence-initial function words).
  std::vector<std::string> stopwords = {
      "a",    "an",    "and",  "as",   "at",   "but",   "by",   "for",
      "from", "he",    "her",  "his",  "how",  "i",     "if",   "in",
      "is",   "it",    "its",  "my",   "of",   "on",    "or",   "our",
      "she",  "that",  "the",  "their", "there", "these", "they", "this",
      "those", "to",   "was",  "we",   "what", "when",  "where", "which",
      "who",  "why",   "with", "you"};
};

enum class SpanKind { entity, number };

struct SpottedSpan {
  Span span;
  SpanKind kind = SpanKind::entity;
};

// Rule-based candidate-answer spotter: maximal runs of capitalized tokens and
// numbers. A run ends at any token carrying trailing punctuation, except a
// "D," day followed by a four-digit year ("October 25, 1956").
std::vector<SpottedSpan> spot_spans(std::string_view text, const SpotterConfig& cfg = {});

// Sentence spans: terminal [.!?] followed by end of text or a capitalized or
// numeric continuation, unless the token is a known abbreviation or an initial.
std::vector<Span> split_sentences(std::string_view text);

// Decomposes one source record into output candidates. Summarization yields one
// record per sentence; reading comprehension yields one record per spotted span
// carrying the whole passage. Ids are left 0; meta "source_doc_id" is set and
// the parent's meta is inherited.
std::vector<Record> split_outputs(const Record& record, Task task,
                                  const SpotterConfig& spotter = {});

// Records with at least min_sentences sentences, in id order.
CorpusHandle filter_min_sentences(const CorpusHandle& corpus, std::size_t min_sentences);

// Applies split_outputs to every record and assigns ids from id_offset.
CorpusHandle decompose_outputs(const CorpusHandle& sources, Task task,
                               const SpotterConfig& spotter = {},
                               RecordId id_offset = 0);

// True iff normalize_for_match(needle) occurs contiguously in
// normalize_for_match(haystack). An empty needle never matches.
bool verbatim_overlap(std::string_view needle, std::string_view haystack);

}  // namespace pairmine
