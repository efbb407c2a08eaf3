#include "pairmine/vector_store.hpp"

#include <cmath>

#include "binio.hpp"
#include "pairmine/error.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

void VectorStore::add(std::uint64_t id, std::span<const float> v) {
  if (v.size() != dim_) {
    throw Error("vector for id " + std::to_string(id) + " has dim " + std::to_string(v.size()) +
                ", store has " + std::to_string(dim_));
  }
  if (index_.count(id)) throw Error("duplicate vector id " + std::to_string(id));
  double n2 = 0.0;
  for (float x : v) {
    if (!std::isfinite(x)) throw NumericError("non-finite vector component for id " + std::to_string(id));
    n2 += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(n2);
  if (norm < 1e-12) throw NumericError("zero vector for id " + std::to_string(id));
  index_.emplace(id, ids_.size());
  ids_.push_back(id);
  if (std::abs(norm - 1.0) > kUnitNormTolerance) {
    ++renormalized_;
    for (float x : v) data_.push_back(static_cast<float>(x / norm));
  } else {
    data_.insert(data_.end(), v.begin(), v.end());
  }
}

void VectorStore::add(std::uint64_t id, const Eigen::VectorXd& v) {
  std::vector<float> f(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) f[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
  add(id, f);
}

std::ptrdiff_t VectorStore::index_of(std::uint64_t id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

VectorStore VectorStore::select(std::span<const std::uint64_t> ids) const {
  VectorStore out(dim_);
  for (std::uint64_t id : ids) {
    const std::ptrdiff_t i = index_of(id);
    if (i < 0) throw Error("no vector for id " + std::to_string(id));
    out.add(id, row(static_cast<std::size_t>(i)));
  }
  return out;
}

std::string serialize_vectors(const VectorStore& store) {
  std::string out;
  out.reserve(16 + store.size() * (8 + 4 * store.dim()));
  out += "PMV1";
  binio::put_u32(out, store.dim());
  binio::put_u64(out, store.size());
  for (std::uint64_t id : store.ids()) binio::put_u64(out, id);
  for (float v : store.data()) binio::put_f32(out, v);
  return out;
}

VectorStore deserialize_vectors(std::string_view bytes, std::string_view what) {
  binio::Reader in(bytes, std::string(what));
  in.expect_magic("PMV1");
  const std::uint32_t dim = in.u32();
  const std::uint64_t count = in.u64();
  if (dim == 0) throw ParseError(std::string(what) + ": zero dimension");
  in.require(count * 8 + count * dim * 4);
  std::vector<std::uint64_t> ids(count);
  for (auto& id : ids) id = in.u64();
  VectorStore store(dim);
  std::vector<float> row(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (auto& v : row) v = in.f32();
    store.add(ids[i], row);
  }
  in.expect_end();
  return store;
}

void save_vectors(const std::filesystem::path& path, const VectorStore& store) {
  write_file_atomic(path, serialize_vectors(store));
}

VectorStore load_vectors(const std::filesystem::path& path) {
  return deserialize_vectors(read_file(path), path.string());
}

}  // namespace pairmine
