#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pairmine/miner.hpp"

namespace pairmine {

// Reduced non-negative fraction.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  static Ratio of(std::uint64_t num, std::uint64_t den);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Ratio&) const = default;
};

enum class RougeKind { r1, r2, rl };

// Precision of candidate against source over tokenize() tokens: clipped n-gram
// matches / candidate n-grams, or LCS / candidate length for rl. A candidate
// too short to have any n-gram scores 1 when the source has none either, else
// 0. Throws Error for an empty candidate.
Ratio rouge_precision_exact(std::string_view candidate, std::string_view source, RougeKind kind);
double rouge_precision(std::string_view candidate, std::string_view source, RougeKind kind);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct RougeTriple {
  double r1 = 0.0;
  double r2 = 0.0;
  double rl = 0.0;
};

struct ScoredPair {
  std::uint64_t x_id = 0;
  std::uint64_t y_id = 0;
  std::string x_text;
  std::string y_text;
  Stage stage = Stage::biencoder;
};

struct PairRouge {
  std::uint64_t x_id = 0;
  std::uint64_t y_id = 0;
  Stage stage = Stage::biencoder;
  RougeTriple scores;
};

inline constexpr double kHistogramWidth = 0.05;
inline constexpr std::size_t kHistogramBuckets = 20;

struct RougeSummary {
  std::size_t count = 0;
  RougeTriple mean;
  // Bucket i counts values in [i*w, (i+1)*w); 1.0 lands in the last bucket.
  std::vector<std::size_t> hist_r1, hist_r2, hist_rl;
};

struct RougeReport {
  std::vector<PairRouge> per_pair;
  RougeSummary overall;
  std::map<std::string, RougeSummary> by_stage;  // keyed by stage name
};

// ROUGE precision of each y against its x. Throws on an empty pair list.
RougeReport abstractiveness_report(std::span<const ScoredPair> pairs);
std::string report_to_json(const RougeReport& report);

}  // namespace pairmine
