#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pairmine/knn_index.hpp"

namespace pairmine {

struct MarginConfig {
  std::size_t k = 4;
  std::size_t top_per_input = 4;
  std::size_t max_candidates = std::numeric_limits<std::size_t>::max();
  std::uint32_t nprobe = 1;

  void validate() const;
};

enum class Stage { biencoder, crossencoder };
std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view name);

struct PairCandidate {
  std::uint64_t x_id = 0;
  std::uint64_t y_id = 0;
  double cosine = 0.0;
  double margin = 0.0;
  std::optional<double> cross_score;
  Stage stage = Stage::biencoder;
};

// Denominators closer to zero than this make the margin degenerate.
inline constexpr double kDegenerateDenominator = 1e-9;

// Ratio margin: cos_xy / (sum(N_x)/(2k_x) + sum(N_y)/(2k_y)), where k_x and k_y
// are the actual neighborhood sizes. nullopt when the denominator is degenerate
// or a neighborhood is empty.
std::optional<double> margin_score(double cos_xy, std::span<const double> nx_cosines,
                                   std::span<const double> ny_cosines);

// Returns true when the pair must be dropped (verbatim overlap).
using OverlapFilter = std::function<bool(std::uint64_t x_id, std::uint64_t y_id)>;

struct MineStats {
  std::size_t pairs_considered = 0;  // forward (x, y) pairs scored
  std::size_t overlap_filtered = 0;
  std::size_t degenerate = 0;
  std::size_t truncated = 0;  // dropped by top_per_input or max_candidates
  std::size_t emitted = 0;
};

struct MineResult {
  std::vector<PairCandidate> candidates;
  MineStats stats;
};

// Orders candidates by margin desc, then (x_id, y_id) asc.
bool margin_order(const PairCandidate& a, const PairCandidate& b);

// For every x: forward search for k + top_per_input neighbors in C_y (N_x is
// the first k), reverse k-neighborhood in C_x for each surfaced y, margin
// score, overlap filter, keep top_per_input per x, then global sort and cap.
MineResult mine(const VectorStore& x_store, const VectorStore& y_store, const Index& x_index,
                const Index& y_index, const MarginConfig& cfg,
                const OverlapFilter& overlap_filter = {});

// Candidate file: JSONL {x_id, y_id, cosine, margin, [cross_score], stage}.
std::string candidates_to_jsonl(std::span<const PairCandidate> candidates);
std::vector<PairCandidate> candidates_from_jsonl(std::string_view content,
                                                 std::string_view what = "candidate file");

std::string pair_key(std::uint64_t x_id, std::uint64_t y_id);

}  // namespace pairmine
