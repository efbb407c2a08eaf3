#include "pairmine/rouge.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "pairmine/error.hpp"
#include "pairmine/text.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

Ratio Ratio::of(std::uint64_t num, std::uint64_t den) {
  if (den == 0) throw Error("ratio with zero denominator");
  const std::uint64_t g = std::gcd(num, den);
  return g == 0 ? Ratio{0, 1} : Ratio{num / g, den / g};
}

namespace {

std::map<std::vector<std::string>, std::uint64_t> ngrams(const std::vector<std::string>& toks,
                                                         std::size_t n) {
  std::map<std::vector<std::string>, std::uint64_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

Ratio ngram_precision(const std::vector<std::string>& cand, const std::vector<std::string>& src,
                      std::size_t n) {
  const auto c = ngrams(cand, n);
  const auto s = ngrams(src, n);
  std::uint64_t total = 0, hit = 0;
  for (const auto& [g, k] : c) {
    total += k;
    auto it = s.find(g);
    if (it != s.end()) hit += std::min(k, it->second);
  }
  if (total == 0) return s.empty() ? Ratio{1, 1} : Ratio{0, 1};
  return Ratio::of(hit, total);
}

void bump(std::vector<std::size_t>& hist, double v) {
  const auto i = static_cast<std::size_t>(std::clamp(v, 0.0, 1.0) / kHistogramWidth);
  ++hist[std::min(i, kHistogramBuckets - 1)];
}

RougeSummary summarize(std::span<const PairRouge* const> rows) {
  RougeSummary s;
  s.count = rows.size();
  s.hist_r1.assign(kHistogramBuckets, 0);
  s.hist_r2.assign(kHistogramBuckets, 0);
  s.hist_rl.assign(kHistogramBuckets, 0);
  for (const PairRouge* p : rows) {
    s.mean.r1 += p->scores.r1;
    s.mean.r2 += p->scores.r2;
    s.mean.rl += p->scores.rl;
    bump(s.hist_r1, p->scores.r1);
    bump(s.hist_r2, p->scores.r2);
    bump(s.hist_rl, p->scores.rl);
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    s.mean.r1 /= n;
    s.mean.r2 /= n;
    s.mean.rl /= n;
  }
  return s;
}

nlohmann::ordered_json summary_json(const RougeSummary& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  j["mean"] = {{"rouge1", s.mean.r1}, {"rouge2", s.mean.r2}, {"rougeL", s.mean.rl}};
  j["histogram_width"] = kHistogramWidth;
  j["histogram"] = {{"rouge1", s.hist_r1}, {"rouge2", s.hist_r2}, {"rougeL", s.hist_rl}};
  return j;
}

}  // namespace

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Ratio rouge_precision_exact(std::string_view candidate, std::string_view source, RougeKind kind) {
  const std::vector<std::string> cand = tokenize(candidate);
  if (cand.empty()) throw Error("rouge_precision: candidate is empty after tokenization");
  const std::vector<std::string> src = tokenize(source);
  switch (kind) {
    case RougeKind::r1:
      return ngram_precision(cand, src, 1);
    case RougeKind::r2:
      return ngram_precision(cand, src, 2);
    case RougeKind::rl:
      return Ratio::of(lcs_length(cand, src), cand.size());
  }
  return {};
}

double rouge_precision(std::string_view candidate, std::string_view source, RougeKind kind) {
  return rouge_precision_exact(candidate, source, kind).value();
}

RougeReport abstractiveness_report(std::span<const ScoredPair> pairs) {
  if (pairs.empty()) throw Error("abstractiveness_report: no pairs");
  RougeReport report;
  report.per_pair.resize(pairs.size());
  parallel_chunks(pairs.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const ScoredPair& p = pairs[i];
      report.per_pair[i] = PairRouge{p.x_id, p.y_id, p.stage,
                                     RougeTriple{rouge_precision(p.y_text, p.x_text, RougeKind::r1),
                                                 rouge_precision(p.y_text, p.x_text, RougeKind::r2),
                                                 rouge_precision(p.y_text, p.x_text, RougeKind::rl)}};
    }
  }, 16);
  std::vector<const PairRouge*> all;
  std::map<std::string, std::vector<const PairRouge*>> stages;
  for (const PairRouge& p : report.per_pair) {
    all.push_back(&p);
    stages[std::string(to_string(p.stage))].push_back(&p);
  }
  report.overall = summarize(all);
  for (const auto& [name, rows] : stages) report.by_stage[name] = summarize(rows);
  return report;
}

std::string report_to_json(const RougeReport& report) {
  nlohmann::ordered_json j;
  j["overall"] = summary_json(report.overall);
  nlohmann::ordered_json stages = nlohmann::ordered_json::object();
  for (const auto& [name, s] : report.by_stage) stages[name] = summary_json(s);
  j["by_stage"] = stages;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const PairRouge& p : report.per_pair) {
    rows.push_back({{"x_id", p.x_id},
                    {"y_id", p.y_id},
                    {"stage", std::string(to_string(p.stage))},
                    {"rouge1", p.scores.r1},
                    {"rouge2", p.scores.r2},
                    {"rougeL", p.scores.rl}});
  }
  j["per_pair"] = rows;
  return j.dump(2) + "\n";
}

}  // namespace pairmine
