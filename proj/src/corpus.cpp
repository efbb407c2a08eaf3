#include "pairmine/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include <json.hpp>

#include "pairmine/error.hpp"
#include "pairmine/text.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

using nlohmann::ordered_json;

std::string_view to_string(Side side) {
  return side == Side::input ? "input" : "output";
}

std::string_view to_string(Task task) {
  return task == Task::reading_comprehension ? "reading_comprehension" : "summarization";
}

Task parse_task(std::string_view name) {
  if (name == "reading_comprehension" || name == "rc") return Task::reading_comprehension;
  if (name == "summarization" || name == "sum") return Task::summarization;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::optional<Span> Record::answer_span() const {
  auto it = meta.find(meta_keys::answer_span);
  if (it == meta.end()) return std::nullopt;
  const std::string& v = it->second;
  const auto colon = v.find(':');
  if (colon == std::string::npos) return std::nullopt;
  Span span;
  auto r1 = std::from_chars(v.data(), v.data() + colon, span.begin);
  auto r2 = std::from_chars(v.data() + colon + 1, v.data() + v.size(), span.end);
  if (r1.ec != std::errc{} || r2.ec != std::errc{} || r2.ptr != v.data() + v.size()) {
    return std::nullopt;
  }
  if (!(span.begin < span.end && span.end <= utf8_length(text))) return std::nullopt;
  return span;
}

void Record::set_answer_span(Span span) {
  meta[std::string(meta_keys::answer_span)] =
      std::to_string(span.begin) + ":" + std::to_string(span.end);
}

std::optional<std::string> Record::answer() const {
  if (auto it = meta.find(meta_keys::answer_text); it != meta.end()) return it->second;
  if (auto span = answer_span()) return utf8_substr(text, span->begin, span->end);
  return std::nullopt;
}

std::string encoder_text(const Record& record) {
  if (record.side == Side::output) {
    if (auto ans = record.answer()) return *ans + " " + record.text;
  }
  return record.text;
}

CorpusHandle::CorpusHandle(std::vector<Record> records, Side side,
                           std::optional<std::string> shard_key)
    : records_(std::move(records)), side_(side), shard_key_(std::move(shard_key)) {
  std::sort(records_.begin(), records_.end(),
            [](const Record& a, const Record& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].side != side_) {
      throw ParseError("record " + std::to_string(records_[i].id) + " has side " +
                       std::string(to_string(records_[i].side)) + ", corpus is " +
                       std::string(to_string(side_)));
    }
    if (i > 0 && records_[i].id == records_[i - 1].id) {
      throw ParseError("duplicate record id " + std::to_string(records_[i].id));
    }
  }
}

const Record* CorpusHandle::find(RecordId id) const {
  auto it = std::lower_bound(records_.begin(), records_.end(), id,
                             [](const Record& r, RecordId v) { return r.id < v; });
  if (it == records_.end() || it->id != id) return nullptr;
  return &*it;
}

const Record& CorpusHandle::at(RecordId id) const {
  const Record* r = find(id);
  if (!r) throw Error("unresolvable record id " + std::to_string(id));
  return *r;
}

IngestResult ingest_jsonl_string(std::string_view content, Side side, RecordId id_offset,
                                 std::string_view source_name) {
  IngestResult result;
  std::vector<Record> records;
  RecordId next_id = id_offset;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    ++result.lines_read;

    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string(source_name) + ": line " + std::to_string(line_no) +
                       ": malformed JSON: " + e.what());
    }
    auto fail = [&](const std::string& what) {
      throw ParseError(std::string(source_name) + ": line " + std::to_string(line_no) +
                       ": " + what);
    };
    if (!obj.is_object()) fail("expected a JSON object");
    auto text_it = obj.find("text");
    if (text_it == obj.end() || !text_it->is_string()) fail("missing string field \"text\"");

    Record rec;
    rec.side = side;
    rec.text = normalize_text(text_it->get<std::string>());
    if (auto m = obj.find("meta"); m != obj.end()) {
      if (!m->is_object()) fail("\"meta\" must be an object");
      for (auto& [k, v] : m->items()) {
        if (!v.is_string()) fail("meta value for \"" + k + "\" must be a string");
        rec.meta.emplace(k, v.get<std::string>());
      }
    }
    if (rec.text.empty()) {
      ++result.skipped_empty;
      continue;
    }
    if (auto id_it = obj.find("id"); id_it != obj.end()) {
      if (!id_it->is_number_unsigned()) fail("\"id\" must be an unsigned integer");
      rec.id = id_it->get<RecordId>();
    } else {
      rec.id = next_id++;
    }
    records.push_back(std::move(rec));
  }
  result.corpus = CorpusHandle(std::move(records), side);
  return result;
}

IngestResult ingest_jsonl(const std::filesystem::path& path, Side side, RecordId id_offset) {
  return ingest_jsonl_string(read_file(path), side, id_offset, path.string());
}

std::string corpus_to_jsonl(const CorpusHandle& corpus) {
  std::string out;
  for (const Record& r : corpus.records()) {
    ordered_json obj;
    obj["id"] = r.id;
    obj["text"] = r.text;
    ordered_json meta = ordered_json::object();
    for (const auto& [k, v] : r.meta) meta[k] = v;
    obj["meta"] = std::move(meta);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

ShardBucketFn date_bucket(std::string_view granularity) {
  std::size_t keep;
  if (granularity == "day") {
    keep = 10;
  } else if (granularity == "month") {
    keep = 7;
  } else if (granularity == "year") {
    keep = 4;
  } else if (granularity == "none") {
    return {};
  } else {
    throw ConfigError("unknown shard granularity '" + std::string(granularity) + "'");
  }
  return [keep](std::string_view v) { return std::string(v.substr(0, keep)); };
}

std::vector<Shard> shard_by_key(const CorpusHandle& corpus, std::string_view key,
                                const ShardBucketFn& bucket) {
  std::map<std::string, std::vector<RecordId>> groups;
  for (const Record& r : corpus.records()) {
    auto it = r.meta.find(key);
    std::string value = it == r.meta.end() ? std::string(kUnkeyedShard)
                        : bucket          ? bucket(it->second)
                                          : it->second;
    groups[value].push_back(r.id);
  }
  std::vector<Shard> shards;
  shards.reserve(groups.size());
  for (auto& [value, ids] : groups) shards.push_back(Shard{value, std::move(ids)});
  return shards;
}

namespace {

struct Token {
  std::size_t begin;       // byte offset of the raw token
  std::size_t end;
  std::size_t core_begin;  // after stripping edge punctuation
  std::size_t core_end;
};

std::vector<Token> raw_tokens(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    Token t{i, j, i, j};
    while (t.core_begin < t.core_end && is_ascii_punct(text[t.core_begin])) ++t.core_begin;
    while (t.core_end > t.core_begin && is_ascii_punct(text[t.core_end - 1])) --t.core_end;
    tokens.push_back(t);
    i = j;
  }
  return tokens;
}

std::string_view core(std::string_view text, const Token& t) {
  return text.substr(t.core_begin, t.core_end - t.core_begin);
}

bool is_number_token(std::string_view c) {
  if (c.empty() || !std::isdigit(static_cast<unsigned char>(c.front()))) return false;
  return std::all_of(c.begin(), c.end(), [](char ch) {
    return std::isdigit(static_cast<unsigned char>(ch)) || ch == ',' || ch == '.' ||
           ch == '-' || ch == '/' || ch == ':';
  });
}

bool is_all_digits(std::string_view c, std::size_t min_len, std::size_t max_len) {
  return c.size() >= min_len && c.size() <= max_len &&
         std::all_of(c.begin(), c.end(),
                     [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); });
}

bool starts_upper(std::string_view c) {
  if (c.empty()) return false;
  const auto u = static_cast<unsigned char>(c.front());
  if (u < 0x80) return std::isupper(u) != 0;
  // Non-ASCII: defer to the case-folding comparison.
  return normalize_for_match(c.substr(0, utf8_byte_offset(c, 1))) !=
         std::string(c.substr(0, utf8_byte_offset(c, 1)));
}

std::size_t cp_offset(std::string_view text, std::size_t byte) {
  return utf8_length(text.substr(0, byte));
}

}  // namespace

std::vector<SpottedSpan> spot_spans(std::string_view text, const SpotterConfig& cfg) {
  const std::vector<Token> tokens = raw_tokens(text);
  const std::set<std::string, std::less<>> stop(cfg.stopwords.begin(), cfg.stopwords.end());

  enum class Cls { other, cap, num };
  std::vector<Cls> cls(tokens.size(), Cls::other);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string_view c = core(text, tokens[i]);
    if (c.empty()) continue;
    if (cfg.numbers && is_number_token(c)) {
      cls[i] = Cls::num;
    } else if (cfg.capitalized && starts_upper(c) && !stop.count(normalize_for_match(c))) {
      cls[i] = Cls::cap;
    }
  }

  std::vector<SpottedSpan> spans;
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (cls[i] == Cls::other) {
      ++i;
      continue;
    }
    const std::size_t first = i;
    bool any_cap = false;
    for (;;) {
      any_cap |= cls[i] == Cls::cap;
      const Token& t = tokens[i];
      const bool trailing = t.core_end < t.end;
      const std::size_t next = i + 1;
      if (next >= tokens.size() || cls[next] == Cls::other) break;
      if (tokens[next].core_begin > tokens[next].begin) break;  // leading punctuation
      if (trailing) {
        const bool date_comma = cls[i] == Cls::num &&
                                text.substr(t.core_end, t.end - t.core_end) == "," &&
                                is_all_digits(core(text, t), 1, 2) &&
                                is_all_digits(core(text, tokens[next]), 4, 4);
        if (!date_comma) break;
      }
      i = next;
    }
    Span span{cp_offset(text, tokens[first].core_begin), cp_offset(text, tokens[i].core_end)};
    spans.push_back({span, any_cap ? SpanKind::entity : SpanKind::number});
    ++i;
  }
  return spans;
}

namespace {

const std::set<std::string, std::less<>>& abbreviations() {
  static const std::set<std::string, std::less<>> kAbbrev = {
      "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "inc", "ltd",
      "co", "corp", "no", "gen", "gov", "sen", "rep", "rev", "mt", "ft", "jan", "feb",
      "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "u.s",
      "u.k", "e.g", "i.e", "a.m", "p.m", "conn"};
  return kAbbrev;
}

}  // namespace

std::vector<Span> split_sentences(std::string_view text) {
  const std::vector<Token> tokens = raw_tokens(text);
  std::vector<Span> sentences;
  std::size_t start = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token& t = tokens[i];
    std::string_view tail = text.substr(t.core_end, t.end - t.core_end);
    const bool last = i + 1 == tokens.size();
    bool boundary = last;
    if (!last && tail.find_first_of(".!?") != std::string_view::npos) {
      const Token& n = tokens[i + 1];
      std::string_view next_raw = text.substr(n.begin, n.end - n.begin);
      std::string_view next_core = core(text, n);
      const bool continuation =
          starts_upper(next_core) ||
          (!next_core.empty() && std::isdigit(static_cast<unsigned char>(next_core.front()))) ||
          (!next_raw.empty() && (next_raw.front() == '"' || next_raw.front() == '\''));
      bool abbrev = false;
      if (tail.front() == '.') {
        std::string folded = normalize_for_match(core(text, t));
        abbrev = abbreviations().count(folded) > 0 ||
                 (core(text, t).size() == 1 && starts_upper(core(text, t)));
      }
      boundary = continuation && !abbrev;
    }
    if (boundary) {
      sentences.push_back(Span{cp_offset(text, tokens[start].begin), cp_offset(text, t.end)});
      start = i + 1;
    }
  }
  return sentences;
}

std::vector<Record> split_outputs(const Record& record, Task task, const SpotterConfig& spotter) {
  std::vector<Record> out;
  auto make = [&](std::string text) {
    Record r;
    r.side = Side::output;
    r.text = std::move(text);
    r.meta = record.meta;
    r.meta.erase(std::string(meta_keys::answer_span));
    r.meta.erase(std::string(meta_keys::answer_text));
    r.meta[std::string(meta_keys::source_doc_id)] = std::to_string(record.id);
    return r;
  };
  if (task == Task::summarization) {
    for (const Span& s : split_sentences(record.text)) {
      out.push_back(make(utf8_substr(record.text, s.begin, s.end)));
    }
  } else {
    for (const SpottedSpan& s : spot_spans(record.text, spotter)) {
      Record r = make(record.text);
      r.set_answer_span(s.span);
      r.meta[std::string(meta_keys::answer_type)] =
          s.kind == SpanKind::number ? "number" : "entity";
      out.push_back(std::move(r));
    }
  }
  return out;
}

CorpusHandle filter_min_sentences(const CorpusHandle& corpus, std::size_t min_sentences) {
  std::vector<Record> kept;
  for (const Record& r : corpus.records()) {
    if (min_sentences == 0 || split_sentences(r.text).size() >= min_sentences) kept.push_back(r);
  }
  return CorpusHandle(std::move(kept), corpus.side(), corpus.shard_key());
}

CorpusHandle decompose_outputs(const CorpusHandle& sources, Task task,
                               const SpotterConfig& spotter, RecordId id_offset) {
  std::vector<Record> all;
  RecordId next = id_offset;
  for (const Record& src : sources.records()) {
    for (Record& r : split_outputs(src, task, spotter)) {
      r.id = next++;
      all.push_back(std::move(r));
    }
  }
  return CorpusHandle(std::move(all), Side::output, sources.shard_key());
}

bool verbatim_overlap(std::string_view needle, std::string_view haystack) {
  const std::string n = normalize_for_match(needle);
  if (n.empty()) return false;
  return normalize_for_match(haystack).find(n) != std::string::npos;
}

}  // namespace pairmine
