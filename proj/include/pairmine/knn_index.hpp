#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pairmine/vector_store.hpp"

namespace pairmine {

enum class IndexKind : std::uint8_t { exact = 0, ivf = 1 };

IndexKind parse_index_kind(std::string_view name);

// Top-k cosines for one query, descending; ties broken by ascending id.
struct Neighborhood {
  std::uint64_t query_id = 0;
  std::vector<std::uint64_t> neighbor_ids;
  std::vector<double> cosines;

  std::size_t size() const { return neighbor_ids.size(); }
};

inline constexpr int kKmeansIterations = 20;

// Inner-product index over a unit-vector store. Exact search scans everything;
// IVF scans the nprobe inverted lists whose k-means centroids are nearest to
// the query. Immutable after build, safe for concurrent search.
class Index {
 public:
  static Index build(VectorStore store, IndexKind kind, std::uint32_t nlist = 1,
                     std::uint64_t seed = 0);

  IndexKind kind() const { return kind_; }
  std::uint32_t nlist() const { return nlist_; }
  std::uint32_t dim() const { return store_.dim(); }
  std::size_t size() const { return store_.size(); }
  const VectorStore& store() const { return store_; }
  std::uint64_t kmeans_seed() const { return kmeans_seed_; }
  std::span<const float> centroid(std::uint32_t list) const {
    return {centroids_.data() + static_cast<std::size_t>(list) * dim(), dim()};
  }
  const std::vector<std::uint32_t>& assignments() const { return assignments_; }
  const std::vector<std::vector<std::uint32_t>>& lists() const { return lists_; }

  // nprobe is ignored for exact indexes; for IVF it must be in [1, nlist].
  Neighborhood search_one(std::span<const float> query, std::uint64_t query_id, std::size_t k,
                          std::uint32_t nprobe = 1) const;
  std::vector<Neighborhood> search(const VectorStore& queries, std::size_t k,
                                   std::uint32_t nprobe = 1) const;

  std::string serialize() const;
  static Index deserialize(std::string_view bytes, std::string_view what = "index file");

 private:
  std::vector<std::uint32_t> probe_order(std::span<const float> query, std::uint32_t nprobe) const;

  IndexKind kind_ = IndexKind::exact;
  std::uint32_t nlist_ = 1;
  std::uint64_t kmeans_seed_ = 0;
  VectorStore store_;
  std::vector<float> centroids_;  // nlist x dim
  std::vector<std::uint32_t> assignments_;
  std::vector<std::vector<std::uint32_t>> lists_;
};

void save_index(const std::filesystem::path& path, const Index& index);
Index load_index(const std::filesystem::path& path);

// Mean over queries of |approx ∩ exact| / |exact|.
double recall_at_k(std::span<const Neighborhood> approx, std::span<const Neighborhood> exact);

}  // namespace pairmine
