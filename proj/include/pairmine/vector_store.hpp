#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace pairmine {

// Row-major float32 unit vectors with a parallel id list.
class VectorStore {
 public:
  VectorStore() = default;
  explicit VectorStore(std::uint32_t dim) : dim_(dim) {}

  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::vector<std::uint64_t>& ids() const { return ids_; }
  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<const float> data() const { return data_; }

  // Appends a row. Throws on duplicate id or dim mismatch. Rows whose norm is
  // off from 1 by more than 1e-4 are renormalized and counted; zero rows throw.
  void add(std::uint64_t id, std::span<const float> v);
  void add(std::uint64_t id, const Eigen::VectorXd& v);

  // Row index for an id, or -1.
  std::ptrdiff_t index_of(std::uint64_t id) const;

  std::size_t renormalized() const { return renormalized_; }

  // Subset in the given id order.
  VectorStore select(std::span<const std::uint64_t> ids) const;

 private:
  std::uint32_t dim_ = 0;
  std::vector<std::uint64_t> ids_;
  std::vector<float> data_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::size_t renormalized_ = 0;
};

inline constexpr double kUnitNormTolerance = 1e-4;

// Dot product accumulated in double, left to right.
double dot(std::span<const float> a, std::span<const float> b);

// "PMV1", u32 dim, u64 count, u64 ids[count], f32 data[count*dim].
std::string serialize_vectors(const VectorStore& store);
VectorStore deserialize_vectors(std::string_view bytes, std::string_view what = "vector file");
void save_vectors(const std::filesystem::path& path, const VectorStore& store);
VectorStore load_vectors(const std::filesystem::path& path);

}  // namespace pairmine
