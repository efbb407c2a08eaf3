#include "pairmine/miner.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

#include "pairmine/error.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

void MarginConfig::validate() const {
  if (k < 1) throw ConfigError("margin.k must be >= 1");
  if (top_per_input < 1 || top_per_input > k) {
    throw ConfigError("margin.top_per_input must be in [1, k]");
  }
  if (nprobe < 1) throw ConfigError("margin.nprobe must be >= 1");
}

std::string_view to_string(Stage stage) {
  return stage == Stage::biencoder ? "biencoder" : "crossencoder";
}

Stage parse_stage(std::string_view name) {
  if (name == "biencoder") return Stage::biencoder;
  if (name == "crossencoder") return Stage::crossencoder;
  throw ParseError("unknown stage '" + std::string(name) + "'");
}

std::optional<double> margin_score(double cos_xy, std::span<const double> nx_cosines,
                                   std::span<const double> ny_cosines) {
  if (nx_cosines.empty() || ny_cosines.empty()) return std::nullopt;
  double sx = 0.0;
  for (double c : nx_cosines) sx += c;
  double sy = 0.0;
  for (double c : ny_cosines) sy += c;
  const double denom = sx / (2.0 * static_cast<double>(nx_cosines.size())) +
                       sy / (2.0 * static_cast<double>(ny_cosines.size()));
  if (!(std::abs(denom) >= kDegenerateDenominator)) return std::nullopt;
  return cos_xy / denom;
}

bool margin_order(const PairCandidate& a, const PairCandidate& b) {
  if (a.margin != b.margin) return a.margin > b.margin;
  if (a.x_id != b.x_id) return a.x_id < b.x_id;
  return a.y_id < b.y_id;
}

MineResult mine(const VectorStore& x_store, const VectorStore& y_store, const Index& x_index,
                const Index& y_index, const MarginConfig& cfg, const OverlapFilter& overlap_filter) {
  cfg.validate();
  MineResult result;
  if (x_store.empty() || y_store.empty() || x_index.size() == 0 || y_index.size() == 0) {
    return result;
  }
  if (x_store.dim() != y_index.dim() || y_store.dim() != x_index.dim()) {
    throw Error("mine: store and index dimensions differ");
  }
  const auto nprobe_for = [&](const Index& idx) {
    return idx.kind() == IndexKind::ivf ? std::min(cfg.nprobe, idx.nlist()) : 1u;
  };

  // Forward neighborhoods over C_y.
  const std::size_t fwd_k = cfg.k + cfg.top_per_input;
  const std::vector<Neighborhood> fwd = y_index.search(x_store, fwd_k, nprobe_for(y_index));

  // Reverse neighborhoods over C_x, only for surfaced ys.
  std::vector<std::uint64_t> surfaced;
  for (const Neighborhood& nb : fwd) surfaced.insert(surfaced.end(), nb.neighbor_ids.begin(), nb.neighbor_ids.end());
  std::sort(surfaced.begin(), surfaced.end());
  surfaced.erase(std::unique(surfaced.begin(), surfaced.end()), surfaced.end());
  const VectorStore y_queries = y_store.select(surfaced);
  const std::vector<Neighborhood> rev = x_index.search(y_queries, cfg.k, nprobe_for(x_index));
  std::map<std::uint64_t, const Neighborhood*> rev_by_id;
  for (const Neighborhood& nb : rev) rev_by_id.emplace(nb.query_id, &nb);

  std::vector<PairCandidate> kept;
  for (const Neighborhood& nb : fwd) {
    const std::size_t kx = std::min(cfg.k, nb.size());
    const std::span<const double> nx(nb.cosines.data(), kx);
    std::vector<PairCandidate> per_x;
    for (std::size_t j = 0; j < nb.size(); ++j) {
      ++result.stats.pairs_considered;
      const std::uint64_t y = nb.neighbor_ids[j];
      if (overlap_filter && overlap_filter(nb.query_id, y)) {
        ++result.stats.overlap_filtered;
        continue;
      }
      const Neighborhood& ny = *rev_by_id.at(y);
      const std::optional<double> m = margin_score(nb.cosines[j], nx, ny.cosines);
      // A non-positive margin carries no ranking information.
      if (!m || !(*m > 0.0)) {
        ++result.stats.degenerate;
        continue;
      }
      per_x.push_back(PairCandidate{nb.query_id, y, nb.cosines[j], *m, std::nullopt, Stage::biencoder});
    }
    std::sort(per_x.begin(), per_x.end(), margin_order);
    if (per_x.size() > cfg.top_per_input) {
      result.stats.truncated += per_x.size() - cfg.top_per_input;
      per_x.resize(cfg.top_per_input);
    }
    kept.insert(kept.end(), per_x.begin(), per_x.end());
  }
  std::sort(kept.begin(), kept.end(), margin_order);
  if (kept.size() > cfg.max_candidates) {
    result.stats.truncated += kept.size() - cfg.max_candidates;
    kept.resize(cfg.max_candidates);
  }
  result.stats.emitted = kept.size();
  result.candidates = std::move(kept);
  return result;
}

std::string pair_key(std::uint64_t x_id, std::uint64_t y_id) {
  return std::to_string(x_id) + ":" + std::to_string(y_id);
}

std::string candidates_to_jsonl(std::span<const PairCandidate> candidates) {
  std::string out;
  for (const PairCandidate& c : candidates) {
    nlohmann::ordered_json obj;
    obj["x_id"] = c.x_id;
    obj["y_id"] = c.y_id;
    obj["cosine"] = c.cosine;
    obj["margin"] = c.margin;
    if (c.cross_score) obj["cross_score"] = *c.cross_score;
    obj["stage"] = std::string(to_string(c.stage));
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::vector<PairCandidate> candidates_from_jsonl(std::string_view content, std::string_view what) {
  std::vector<PairCandidate> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      PairCandidate c;
      c.x_id = obj.at("x_id").get<std::uint64_t>();
      c.y_id = obj.at("y_id").get<std::uint64_t>();
      c.cosine = obj.at("cosine").get<double>();
      c.margin = obj.at("margin").get<double>();
      if (obj.contains("cross_score")) c.cross_score = obj.at("cross_score").get<double>();
      c.stage = parse_stage(obj.at("stage").get<std::string>());
      out.push_back(c);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string(what) + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pairmine
