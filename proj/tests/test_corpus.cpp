#include <doctest.h>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "pairmine/corpus.hpp"
#include "pairmine/error.hpp"
#include "pairmine/text.hpp"
#include "pairmine/util.hpp"
#include "test_support.hpp"

using namespace pairmine;

namespace {

std::vector<RecordId> ids_of(const CorpusHandle& c) {
  std::vector<RecordId> out;
  for (const Record& r : c.records()) out.push_back(r.id);
  return out;
}

Record dated(RecordId id, std::string date) {
  Record r;
  r.id = id;
  r.text = "text " + std::to_string(id);
  if (!date.empty()) r.meta["date"] = std::move(date);
  return r;
}

std::vector<std::string> span_texts(const std::string& text, const std::vector<SpottedSpan>& spans) {
  std::vector<std::string> out;
  for (const SpottedSpan& s : spans) out.push_back(utf8_substr(text, s.span.begin, s.span.end));
  return out;
}

std::string random_words(Rng& rng, std::size_t n, std::size_t vocab) {
  static const char* kWords[] = {"alpha", "Beta", "gamma", "Delta", "  ", "x", "Y", "zz", "1990", "q."};
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += rng.below(4) == 0 ? "  " : " ";
    s += kWords[rng.below(std::min<std::size_t>(vocab, 10))];
  }
  return s;
}

}  // namespace

TEST_CASE("ingest assigns sequential ids from the offset") {
  const IngestResult r = ingest_jsonl_string("{\"text\":\"a\"}\n{\"text\":\"b\"}\n{\"text\":\"c\"}\n",
                                             Side::input, 0);
  CHECK(r.corpus.size() == 3);
  CHECK(ids_of(r.corpus) == std::vector<RecordId>{0, 1, 2});
  const IngestResult shifted = ingest_jsonl_string("{\"text\":\"a\"}\n{\"text\":\"b\"}\n", Side::input, 10);
  CHECK(ids_of(shifted.corpus) == std::vector<RecordId>{10, 11});
}

TEST_CASE("ingest skips lines that normalize to nothing") {
  const IngestResult r = ingest_jsonl_string(
      "{\"text\":\"one\"}\n{\"text\":\"  \"}\n{\"text\":\"three\"}\n", Side::output, 0);
  CHECK(r.corpus.size() == 2);
  CHECK(r.skipped_empty == 1);
  CHECK(r.lines_read == 3);
  CHECK(r.corpus.side() == Side::output);
}

TEST_CASE("ingest normalizes text and keeps meta and explicit ids") {
  const IngestResult r = ingest_jsonl_string(
      "{\"id\":7,\"text\":\"  Hello   World \",\"meta\":{\"date\":\"2020-01-02\"}}\n", Side::input);
  REQUIRE(r.corpus.size() == 1);
  const Record& rec = r.corpus.records()[0];
  CHECK(rec.id == 7);
  CHECK(rec.text == "Hello World");
  CHECK(rec.meta.at("date") == "2020-01-02");
}

TEST_CASE("ingest reports the malformed line number") {
  try {
    ingest_jsonl_string("{\"text\":\"a\"}\n{not json}\n", Side::input);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(ingest_jsonl_string("{\"meta\":{}}\n", Side::input), ParseError);
  CHECK_THROWS_AS(ingest_jsonl("/nonexistent/dir/file.jsonl", Side::input), IoError);
}

TEST_CASE("ingest of the same file twice is byte-identical") {
  testing::ScratchDir dir("corpus");
  write_file_atomic(dir / "c.jsonl",
                    "{\"text\":\"b  c\"}\n{\"text\":\"d\",\"meta\":{\"k\":\"v\"}}\n");
  const IngestResult a = ingest_jsonl(dir / "c.jsonl", Side::input);
  const IngestResult b = ingest_jsonl(dir / "c.jsonl", Side::input);
  CHECK(corpus_to_jsonl(a.corpus) == corpus_to_jsonl(b.corpus));
}

TEST_CASE("corpus handle rejects duplicate ids and mixed sides") {
  Record a = dated(1, "");
  Record b = dated(1, "");
  CHECK_THROWS_AS(CorpusHandle({a, b}, Side::input), ParseError);
  b.id = 2;
  b.side = Side::output;
  CHECK_THROWS_AS(CorpusHandle({a, b}, Side::input), ParseError);
}

TEST_CASE("corpus handle iterates in ascending id order") {
  const CorpusHandle c({dated(5, ""), dated(2, ""), dated(9, "")}, Side::input);
  CHECK(ids_of(c) == std::vector<RecordId>{2, 5, 9});
  CHECK(c.find(5) != nullptr);
  CHECK(c.find(6) == nullptr);
  CHECK_THROWS_AS(c.at(6), Error);
}

TEST_CASE("shard_by_key examples") {
  const CorpusHandle two_days({dated(0, "d1"), dated(1, "d1"), dated(2, "d2"), dated(3, "d2")}, Side::input);
  const auto s = shard_by_key(two_days, "date");
  REQUIRE(s.size() == 2);
  CHECK(s[0].key_value == "d1");
  CHECK(s[0].record_ids.size() == 2);
  CHECK(s[1].record_ids.size() == 2);

  const CorpusHandle one_day({dated(0, "d"), dated(1, "d"), dated(2, "d")}, Side::input);
  const auto one = shard_by_key(one_day, "date");
  REQUIRE(one.size() == 1);
  CHECK(one[0].record_ids == std::vector<RecordId>{0, 1, 2});

  const CorpusHandle missing({dated(0, "d1"), dated(1, "d2"), dated(2, "")}, Side::input);
  const auto m = shard_by_key(missing, "date");
  REQUIRE(m.size() == 3);
  const auto unkeyed = std::find_if(m.begin(), m.end(), [](const Shard& sh) { return sh.key_value == kUnkeyedShard; });
  REQUIRE(unkeyed != m.end());
  CHECK(unkeyed->record_ids == std::vector<RecordId>{2});
}

TEST_CASE("date buckets truncate ISO dates") {
  CHECK(date_bucket("day")("2020-03-04T10:00:00") == "2020-03-04");
  CHECK(date_bucket("month")("2020-03-04") == "2020-03");
  CHECK(date_bucket("year")("2020-03-04") == "2020");
  CHECK_THROWS_AS(date_bucket("week"), ConfigError);
}

TEST_CASE("shard_by_key is a partition on random corpora") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.below(60);
    std::vector<Record> recs;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t day = rng.below(6);
      recs.push_back(dated(i * 3 + 1, day == 0 ? "" : "2021-01-0" + std::to_string(day)));
    }
    const CorpusHandle c(recs, Side::input);
    const auto shards = shard_by_key(c, "date", date_bucket("month"));
    std::multiset<RecordId> seen;
    for (std::size_t i = 0; i < shards.size(); ++i) {
      if (i > 0 && shards[i].key_value != kUnkeyedShard && shards[i - 1].key_value != kUnkeyedShard) {
        CHECK(shards[i - 1].key_value < shards[i].key_value);
      }
      seen.insert(shards[i].record_ids.begin(), shards[i].record_ids.end());
    }
    const auto all = ids_of(c);
    CHECK(seen.size() == all.size());
    CHECK(std::multiset<RecordId>(all.begin(), all.end()) == seen);
  }
}

TEST_CASE("sentence splitting") {
  CHECK(split_sentences("A b. C d.").size() == 2);
  CHECK(split_sentences("Mr. Smith went home. He slept.").size() == 2);
  CHECK(split_sentences("It cost 3.5 dollars. Then 4 more.").size() == 2);
  CHECK(split_sentences("J. R. Tolkien wrote books.").size() == 1);
  CHECK(split_sentences("no terminal punctuation here").size() == 1);
  CHECK(split_sentences("").empty());
}

TEST_CASE("split_outputs for summarization yields one record per sentence") {
  Record doc;
  doc.id = 4;
  doc.text = "A b. C d.";
  doc.meta["date"] = "2020-01-01";
  const auto out = split_outputs(doc, Task::summarization);
  REQUIRE(out.size() == 2);
  CHECK(out[0].text == "A b.");
  CHECK(out[1].text == "C d.");
  for (const Record& r : out) {
    CHECK(r.side == Side::output);
    CHECK(r.meta.at("source_doc_id") == "4");
    CHECK(r.meta.at("date") == "2020-01-01");
  }
}

TEST_CASE("spotter finds capitalized runs and numbers") {
  const std::string text = "Alice met Bob in 1990.";
  const auto spans = spot_spans(text);
  CHECK(span_texts(text, spans) == std::vector<std::string>{"Alice", "Bob", "1990"});
  REQUIRE(spans.size() == 3);
  CHECK(spans[0].span == Span{0, 5});
  CHECK(spans[1].span == Span{10, 13});
  CHECK(spans[2].span == Span{17, 21});
  CHECK(spans[2].kind == SpanKind::number);

  const std::string multi = "They visited New York City on October 25, 1956 with Ann.";
  CHECK(span_texts(multi, spot_spans(multi)) ==
        std::vector<std::string>{"New York City", "October 25, 1956", "Ann"});
}

TEST_CASE("split_outputs for reading comprehension yields one record per span") {
  Record passage;
  passage.id = 3;
  passage.text = "Alice met Bob in 1990.";
  const auto out = split_outputs(passage, Task::reading_comprehension);
  REQUIRE(out.size() == 3);
  std::vector<std::string> answers;
  for (const Record& r : out) {
    CHECK(r.text == passage.text);
    REQUIRE(r.answer_span().has_value());
    answers.push_back(*r.answer());
  }
  CHECK(answers == std::vector<std::string>{"Alice", "Bob", "1990"});
  CHECK(out[2].meta.at("answer_type") == "number");

  Record plain;
  plain.text = "the the the";
  CHECK(split_outputs(plain, Task::reading_comprehension).empty());
}

TEST_CASE("split_outputs is deterministic with spans inside the text") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    Record r;
    r.id = static_cast<RecordId>(trial);
    r.text = normalize_text(random_words(rng, 1 + rng.below(25), 10));
    if (r.text.empty()) continue;
    for (Task task : {Task::reading_comprehension, Task::summarization}) {
      const auto a = split_outputs(r, task);
      const auto b = split_outputs(r, task);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].text == b[i].text);
        CHECK(a[i].meta == b[i].meta);
        if (task == Task::reading_comprehension) {
          const Span s = *a[i].answer_span();
          CHECK(s.begin < s.end);
          CHECK(s.end <= utf8_length(a[i].text));
        }
      }
    }
  }
}

TEST_CASE("decompose_outputs numbers records from the offset") {
  Record a;
  a.id = 0;
  a.text = "One two. Three four. Five.";
  Record b;
  b.id = 1;
  b.text = "Six seven.";
  a.side = b.side = Side::output;
  const CorpusHandle docs({a, b}, Side::output);
  const CorpusHandle sents = decompose_outputs(docs, Task::summarization, {}, 100);
  CHECK(ids_of(sents) == std::vector<RecordId>{100, 101, 102, 103});
  CHECK(sents.at(103).meta.at("source_doc_id") == "1");
}

TEST_CASE("filter_min_sentences drops short documents") {
  Record a;
  a.id = 0;
  a.text = "One. Two. Three. Four.";
  Record b;
  b.id = 1;
  b.text = "One. Two.";
  const CorpusHandle docs({a, b}, Side::input);
  CHECK(ids_of(filter_min_sentences(docs, 4)) == std::vector<RecordId>{0});
  CHECK(filter_min_sentences(docs, 0).size() == 2);
  CHECK(filter_min_sentences(docs, 2).size() == 2);
}

TEST_CASE("verbatim_overlap examples") {
  CHECK(verbatim_overlap("The Cat", "the cat sat"));
  CHECK_FALSE(verbatim_overlap("dog", "the cat sat"));
  CHECK(verbatim_overlap("a  b", "x a b y"));
  CHECK_FALSE(verbatim_overlap("", "anything"));
}

TEST_CASE("verbatim_overlap survives appending a suffix to the haystack") {
  Rng rng(17);
  int positives = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::string hay = random_words(rng, 1 + rng.below(12), 4);
    const std::string needle = rng.below(2) ? random_words(rng, 1 + rng.below(3), 4) : hay;
    const std::string suffix = random_words(rng, rng.below(6), 10);
    if (verbatim_overlap(needle, hay)) {
      ++positives;
      CHECK(verbatim_overlap(needle, hay + suffix));
      CHECK(verbatim_overlap(needle, hay + " " + suffix));
    }
  }
  CHECK(positives > 50);
}

TEST_CASE("ingest then export then ingest preserves text and meta") {
  Rng rng(23);
  std::vector<Record> recs;
  for (RecordId id = 0; id < 40; ++id) {
    Record r;
    r.id = id * 2;
    r.side = Side::output;
    r.text = normalize_text(random_words(rng, 1 + rng.below(10), 10));
    if (r.text.empty()) r.text = "x";
    if (rng.below(2)) r.meta["date"] = "2020-02-0" + std::to_string(1 + rng.below(9));
    if (rng.below(3) == 0) r.set_answer_span(Span{0, 1});
    recs.push_back(r);
  }
  const CorpusHandle c(recs, Side::output);
  const std::string once = corpus_to_jsonl(c);
  const CorpusHandle back = ingest_jsonl_string(once, Side::output).corpus;
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(back.records()[i].id == c.records()[i].id);
    CHECK(back.records()[i].text == c.records()[i].text);
    CHECK(back.records()[i].meta == c.records()[i].meta);
  }
  CHECK(corpus_to_jsonl(back) == once);
}

TEST_CASE("encoder_text prefixes the answer for reading comprehension outputs") {
  Record r;
  r.side = Side::output;
  r.text = "Alice met Bob.";
  CHECK(encoder_text(r) == "Alice met Bob.");
  r.set_answer_span(Span{10, 13});
  CHECK(encoder_text(r).find("Bob") == 0);
}
