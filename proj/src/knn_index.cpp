#include "pairmine/knn_index.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "binio.hpp"
#include "pairmine/error.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

IndexKind parse_index_kind(std::string_view name) {
  if (name == "exact" || name == "flat") return IndexKind::exact;
  if (name == "ivf") return IndexKind::ivf;
  throw ConfigError("unknown index kind '" + std::string(name) + "'");
}

namespace {

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

std::uint32_t nearest_centroid(std::span<const float> v, const std::vector<float>& centroids,
                               std::uint32_t nlist, std::uint32_t dim) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint32_t c = 0; c < nlist; ++c) {
    const double d = squared_distance(v, {centroids.data() + static_cast<std::size_t>(c) * dim, dim});
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

struct Scored {
  double score;
  std::uint64_t id;
};

bool ranks_before(const Scored& a, const Scored& b) {
  return a.score > b.score || (a.score == b.score && a.id < b.id);
}

Neighborhood top_k(std::vector<Scored>& cand, std::uint64_t query_id, std::size_t k) {
  const std::size_t kk = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end(),
                    ranks_before);
  Neighborhood nb;
  nb.query_id = query_id;
  nb.neighbor_ids.reserve(kk);
  nb.cosines.reserve(kk);
  for (std::size_t i = 0; i < kk; ++i) {
    nb.neighbor_ids.push_back(cand[i].id);
    nb.cosines.push_back(cand[i].score);
  }
  return nb;
}

}  // namespace

Index Index::build(VectorStore store, IndexKind kind, std::uint32_t nlist, std::uint64_t seed) {
  if (store.empty()) throw Error("cannot build an index over an empty store");
  Index idx;
  idx.kind_ = kind;
  idx.kmeans_seed_ = seed;
  const std::size_t n = store.size();
  const std::uint32_t dim = store.dim();
  idx.store_ = std::move(store);
  if (kind == IndexKind::exact) {
    idx.nlist_ = 1;
    idx.assignments_.assign(n, 0);
    idx.lists_.assign(1, {});
    idx.lists_[0].resize(n);
    std::iota(idx.lists_[0].begin(), idx.lists_[0].end(), 0u);
    return idx;
  }
  if (nlist < 1 || nlist > n) {
    throw ConfigError("nlist must be in [1, " + std::to_string(n) + "], got " + std::to_string(nlist));
  }
  idx.nlist_ = nlist;
  const VectorStore& vs = idx.store_;

  // Seeded random-point initialization.
  Rng rng(derive_seed(seed, "kmeans.init"));
  std::vector<float>& cent = idx.centroids_;
  cent.resize(static_cast<std::size_t>(nlist) * dim);
  const std::vector<std::size_t> init = rng.sample_distinct(n, nlist);
  for (std::uint32_t c = 0; c < nlist; ++c) {
    std::copy_n(vs.row(init[c]).begin(), dim, cent.begin() + static_cast<std::ptrdiff_t>(c) * dim);
  }

  std::vector<std::uint32_t>& assign = idx.assignments_;
  assign.assign(n, 0);
  auto assign_all = [&] {
    parallel_chunks(n, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) assign[i] = nearest_centroid(vs.row(i), cent, nlist, dim);
    });
  };

  for (int iter = 0; iter < kKmeansIterations; ++iter) {
    assign_all();
    std::vector<double> sums(static_cast<std::size_t>(nlist) * dim, 0.0);
    std::vector<std::size_t> sizes(nlist, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t c = assign[i];
      ++sizes[c];
      auto r = vs.row(i);
      for (std::uint32_t d = 0; d < dim; ++d) sums[static_cast<std::size_t>(c) * dim + d] += r[d];
    }
    for (std::uint32_t c = 0; c < nlist; ++c) {
      if (sizes[c] == 0) continue;
      for (std::uint32_t d = 0; d < dim; ++d) {
        cent[static_cast<std::size_t>(c) * dim + d] =
            static_cast<float>(sums[static_cast<std::size_t>(c) * dim + d] / static_cast<double>(sizes[c]));
      }
    }
    // Re-seed empty clusters from the largest cluster's farthest point.
    for (std::uint32_t c = 0; c < nlist; ++c) {
      if (sizes[c] != 0) continue;
      const auto largest = static_cast<std::uint32_t>(
          std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (assign[i] != largest) continue;
        const double d = squared_distance(vs.row(i), idx.centroid(largest));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n || sizes[largest] < 2) break;
      std::copy_n(vs.row(far).begin(), dim, cent.begin() + static_cast<std::ptrdiff_t>(c) * dim);
      assign[far] = c;
      --sizes[largest];
      sizes[c] = 1;
    }
    for (float v : cent) {
      if (!std::isfinite(v)) throw NumericError("k-means produced a non-finite centroid");
    }
  }
  assign_all();
  idx.lists_.assign(nlist, {});
  for (std::size_t i = 0; i < n; ++i) idx.lists_[assign[i]].push_back(static_cast<std::uint32_t>(i));
  return idx;
}

std::vector<std::uint32_t> Index::probe_order(std::span<const float> query,
                                              std::uint32_t nprobe) const {
  std::vector<std::pair<double, std::uint32_t>> d(nlist_);
  for (std::uint32_t c = 0; c < nlist_; ++c) d[c] = {squared_distance(query, centroid(c)), c};
  std::partial_sort(d.begin(), d.begin() + nprobe, d.end());
  std::vector<std::uint32_t> out(nprobe);
  for (std::uint32_t i = 0; i < nprobe; ++i) out[i] = d[i].second;
  return out;
}

Neighborhood Index::search_one(std::span<const float> query, std::uint64_t query_id,
                               std::size_t k, std::uint32_t nprobe) const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (query.size() != dim()) {
    throw Error("query dim " + std::to_string(query.size()) + " does not match index dim " +
                std::to_string(dim()));
  }
  std::vector<Scored> cand;
  if (kind_ == IndexKind::exact) {
    cand.resize(store_.size());
    for (std::size_t i = 0; i < store_.size(); ++i) cand[i] = {dot(query, store_.row(i)), store_.ids()[i]};
  } else {
    if (nprobe < 1 || nprobe > nlist_) {
      throw ConfigError("nprobe must be in [1, " + std::to_string(nlist_) + "], got " +
                        std::to_string(nprobe));
    }
    for (std::uint32_t list : probe_order(query, nprobe)) {
      for (std::uint32_t i : lists_[list]) cand.push_back({dot(query, store_.row(i)), store_.ids()[i]});
    }
  }
  return top_k(cand, query_id, k);
}

std::vector<Neighborhood> Index::search(const VectorStore& queries, std::size_t k,
                                        std::uint32_t nprobe) const {
  if (queries.dim() != dim() && !queries.empty()) {
    throw Error("query dim " + std::to_string(queries.dim()) + " does not match index dim " +
                std::to_string(dim()));
  }
  std::vector<Neighborhood> out(queries.size());
  parallel_chunks(queries.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = search_one(queries.row(i), queries.ids()[i], k, nprobe);
  });
  return out;
}

// "PMIX", u32 version, u8 kind, u32 nlist, u64 kmeans_seed, f32 centroids
// [nlist*dim] (ivf only), u32 assignments[count], then the embedded PMV1 store.
std::string Index::serialize() const {
  std::string out = "PMIX";
  binio::put_u32(out, 1);
  binio::put_u8(out, static_cast<std::uint8_t>(kind_));
  binio::put_u32(out, nlist_);
  binio::put_u64(out, kmeans_seed_);
  binio::put_u32(out, dim());
  binio::put_u64(out, store_.size());
  if (kind_ == IndexKind::ivf) {
    for (float v : centroids_) binio::put_f32(out, v);
  }
  for (std::uint32_t a : assignments_) binio::put_u32(out, a);
  out += serialize_vectors(store_);
  return out;
}

Index Index::deserialize(std::string_view bytes, std::string_view what) {
  binio::Reader in(bytes, std::string(what));
  in.expect_magic("PMIX");
  if (in.u32() != 1) throw ParseError(std::string(what) + ": unsupported version");
  Index idx;
  const std::uint8_t kind = in.u8();
  if (kind > 1) throw ParseError(std::string(what) + ": bad index kind");
  idx.kind_ = static_cast<IndexKind>(kind);
  idx.nlist_ = in.u32();
  idx.kmeans_seed_ = in.u64();
  const std::uint32_t dim = in.u32();
  const std::uint64_t count = in.u64();
  if (idx.nlist_ == 0 || (idx.kind_ == IndexKind::ivf && idx.nlist_ > count)) {
    throw ParseError(std::string(what) + ": bad nlist");
  }
  if (idx.kind_ == IndexKind::ivf) {
    in.require(static_cast<std::uint64_t>(idx.nlist_) * dim * 4);
    idx.centroids_.resize(static_cast<std::size_t>(idx.nlist_) * dim);
    for (float& v : idx.centroids_) v = in.f32();
  }
  in.require(count * 4);
  idx.assignments_.resize(count);
  for (auto& a : idx.assignments_) {
    a = in.u32();
    if (a >= idx.nlist_) throw ParseError(std::string(what) + ": assignment out of range");
  }
  const std::size_t header = bytes.size() - in.remaining();
  idx.store_ = deserialize_vectors(bytes.substr(header), what);
  if (idx.store_.size() != count || idx.store_.dim() != dim) {
    throw ParseError(std::string(what) + ": embedded store does not match header");
  }
  idx.lists_.assign(idx.nlist_, {});
  for (std::size_t i = 0; i < count; ++i) idx.lists_[idx.assignments_[i]].push_back(static_cast<std::uint32_t>(i));
  return idx;
}

void save_index(const std::filesystem::path& path, const Index& index) {
  write_file_atomic(path, index.serialize());
}

Index load_index(const std::filesystem::path& path) {
  return Index::deserialize(read_file(path), path.string());
}

double recall_at_k(std::span<const Neighborhood> approx, std::span<const Neighborhood> exact) {
  if (approx.size() != exact.size()) throw Error("recall_at_k: result sets differ in size");
  if (exact.empty()) return 1.0;
  double total = 0.0;
  for (std::size_t q = 0; q < exact.size(); ++q) {
    const std::unordered_set<std::uint64_t> found(approx[q].neighbor_ids.begin(),
                                                  approx[q].neighbor_ids.end());
    std::size_t hit = 0;
    for (std::uint64_t id : exact[q].neighbor_ids) hit += found.count(id);
    total += exact[q].neighbor_ids.empty()
                 ? 1.0
                 : static_cast<double>(hit) / static_cast<double>(exact[q].neighbor_ids.size());
  }
  return total / static_cast<double>(exact.size());
}

}  // namespace pairmine
