#include "pairmine/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "pairmine/error.hpp"
#include "pairmine/text.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

namespace {

std::size_t copy_count(double fraction, std::size_t len) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(len) + 1e-9));
}

std::string word(std::size_t i) { return "w" + std::to_string(i); }

std::string join(const std::vector<std::string>& toks) {
  std::string out;
  for (const std::string& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string day(std::size_t d) {
  // Consecutive days starting 2020-01-01; months treated as 28 days long keeps
  // every generated date valid.
  char buf[16];
  std::snprintf(buf, sizeof buf, "2020-%02zu-%02zu", 1 + (d / 28) % 12, 1 + d % 28);
  return buf;
}

template <typename F>
void for_each_line(std::string_view content, std::string_view what, F&& f) {
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
      f(nlohmann::json::parse(line), line_no);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string(what) + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_pairs == 0) throw ConfigError("synthetic: num_pairs must be >= 1");
  if (input_len == 0 || output_len == 0) throw ConfigError("synthetic: lengths must be >= 1");
  if (vocab_size < std::max(input_len, output_len)) {
    throw ConfigError("synthetic: vocab_size must be >= tokens per record");
  }
  for (double f : {signal_overlap, distractor_overlap}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("synthetic: overlaps must be in [0, 1]");
  }
  if (copy_count(signal_overlap, output_len) > input_len ||
      copy_count(distractor_overlap, output_len) > input_len) {
    throw ConfigError("synthetic: cannot copy more tokens than an input has");
  }
  if (require_separable && !(distractor_overlap < signal_overlap)) {
    throw ConfigError("synthetic: separable preset needs distractor_overlap < signal_overlap");
  }
  if (num_days == 0) throw ConfigError("synthetic: num_days must be >= 1");
}

SyntheticSpec preset(std::string_view name) {
  SyntheticSpec s;
  if (name == "separable") {
    s.distractor_overlap = 0.2;
    s.require_separable = true;
  } else if (name == "lexical_trap") {
    s.distractor_overlap = 0.5;
  } else {
    throw ConfigError("unknown synthetic preset '" + std::string(name) + "'");
  }
  return s;
}

SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.rng_seed, "synthetic"));
  const std::size_t total_pairs = spec.num_pairs + spec.seed_pairs;
  auto random_word = [&] { return word(rng.below(spec.vocab_size)); };

  std::vector<std::vector<std::string>> xs(total_pairs);
  std::vector<std::vector<std::string>> ys(total_pairs);
  std::vector<std::size_t> days(total_pairs);
  const std::size_t n_signal = copy_count(spec.signal_overlap, spec.output_len);
  for (std::size_t p = 0; p < total_pairs; ++p) {
    days[p] = rng.below(spec.num_days);
    auto& x = xs[p];
    for (std::size_t i = 0; i < spec.input_len; ++i) x.push_back(random_word());
    auto& y = ys[p];
    for (std::size_t pos : rng.sample_distinct(spec.input_len, n_signal)) y.push_back(x[pos]);
    while (y.size() < spec.output_len) y.push_back(random_word());
    rng.shuffle(y);
  }

  // Distractors: a contiguous run copied from a random input, embedded at a
  // random offset among random tokens. Seed inputs are sources too, so seed
  // documents have lexical near-misses in the output corpus.
  const std::size_t n_trap = copy_count(spec.distractor_overlap, spec.output_len);
  std::vector<std::vector<std::string>> traps(spec.distractor_count);
  std::vector<std::size_t> trap_days(spec.distractor_count);
  for (std::size_t d = 0; d < spec.distractor_count; ++d) {
    const std::size_t src = rng.below(total_pairs);
    trap_days[d] = days[src];
    const std::size_t from = rng.below(spec.input_len - n_trap + 1);
    const std::size_t at = rng.below(spec.output_len - n_trap + 1);
    auto& y = traps[d];
    for (std::size_t i = 0; i < at; ++i) y.push_back(random_word());
    for (std::size_t i = 0; i < n_trap; ++i) y.push_back(xs[src][from + i]);
    while (y.size() < spec.output_len) y.push_back(random_word());
  }

  // Output ids are a random permutation so id order says nothing about gold.
  const std::size_t n_out = spec.num_pairs + spec.distractor_count;
  std::vector<RecordId> out_ids(n_out);
  std::iota(out_ids.begin(), out_ids.end(), RecordId{0});
  rng.shuffle(out_ids);

  SyntheticData data;
  std::vector<Record> in_records, out_records;
  for (std::size_t p = 0; p < spec.num_pairs; ++p) {
    Record x{p, join(xs[p]), Side::input, {}};
    x.meta[std::string(meta_keys::date)] = day(days[p]);
    in_records.push_back(std::move(x));
    Record y{out_ids[p], join(ys[p]), Side::output, {}};
    y.meta[std::string(meta_keys::date)] = day(days[p]);
    out_records.push_back(std::move(y));
    data.gold.emplace(p, out_ids[p]);
  }
  for (std::size_t d = 0; d < spec.distractor_count; ++d) {
    Record y{out_ids[spec.num_pairs + d], join(traps[d]), Side::output, {}};
    y.meta[std::string(meta_keys::date)] = day(trap_days[d]);
    out_records.push_back(std::move(y));
  }
  for (std::size_t p = spec.num_pairs; p < total_pairs; ++p) {
    SeedExample s;
    s.x = Record{0, join(xs[p]), Side::input, {}};
    s.y = Record{0, join(ys[p]), Side::output, {}};
    s.task = Task::summarization;
    data.seed.push_back(std::move(s));
  }
  data.inputs = CorpusHandle(std::move(in_records), Side::input);
  data.outputs = CorpusHandle(std::move(out_records), Side::output);
  return data;
}

std::string seed_to_jsonl(const std::vector<SeedExample>& seed) {
  std::string out;
  for (const SeedExample& s : seed) {
    nlohmann::ordered_json obj;
    obj["x_text"] = s.x.text;
    obj["y_text"] = s.y.text;
    if (!s.y.meta.empty()) {
      nlohmann::ordered_json meta = nlohmann::ordered_json::object();
      for (const auto& [k, v] : s.y.meta) meta[k] = v;
      obj["y_meta"] = meta;
    }
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::vector<SeedExample> seed_from_jsonl(std::string_view content, Task task, std::string_view what) {
  std::vector<SeedExample> out;
  for_each_line(content, what, [&](const nlohmann::json& obj, std::size_t line_no) {
    SeedExample s;
    s.task = task;
    s.x = Record{0, obj.at("x_text").get<std::string>(), Side::input, {}};
    s.y = Record{0, obj.at("y_text").get<std::string>(), Side::output, {}};
    if (obj.contains("y_meta")) {
      for (const auto& [k, v] : obj.at("y_meta").items()) s.y.meta[k] = v.get<std::string>();
    }
    if (tokenize(s.x.text).empty() || tokenize(s.y.text).empty()) {
      throw ParseError(std::string(what) + ": line " + std::to_string(line_no) + ": empty text");
    }
    if (task == Task::reading_comprehension && !s.y.answer()) {
      throw ParseError(std::string(what) + ": line " + std::to_string(line_no) +
                       ": reading-comprehension seed output needs answer_span or answer_text");
    }
    out.push_back(std::move(s));
  });
  return out;
}

std::vector<SeedExample> load_seed(const std::filesystem::path& path, Task task) {
  return seed_from_jsonl(read_file(path), task, path.string());
}

std::string gold_to_jsonl(const GoldPairs& gold) {
  std::string out;
  for (const auto& [x, y] : gold) {
    nlohmann::ordered_json obj;
    obj["x_id"] = x;
    obj["y_id"] = y;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

GoldPairs gold_from_jsonl(std::string_view content, std::string_view what) {
  GoldPairs gold;
  for_each_line(content, what, [&](const nlohmann::json& obj, std::size_t line_no) {
    if (!gold.emplace(obj.at("x_id").get<RecordId>(), obj.at("y_id").get<RecordId>()).second) {
      throw ParseError(std::string(what) + ": line " + std::to_string(line_no) + ": duplicate x_id");
    }
  });
  return gold;
}

GoldPairs load_gold(const std::filesystem::path& path) {
  return gold_from_jsonl(read_file(path), path.string());
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticData& data) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "inputs.jsonl", corpus_to_jsonl(data.inputs));
  write_file_atomic(dir / "outputs.jsonl", corpus_to_jsonl(data.outputs));
  write_file_atomic(dir / "seed.jsonl", seed_to_jsonl(data.seed));
  write_file_atomic(dir / "gold.jsonl", gold_to_jsonl(data.gold));
}

}  // namespace pairmine
