#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace pairmine {

inline constexpr std::uint32_t kDefaultNumBuckets = 1u << 18;

// Sparse bag of hashed lowercased word unigrams and bigrams.
// Entries are sorted by bucket, every count is positive.
struct HashedFeatures {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> entries;  // bucket, count
  std::uint32_t num_buckets = kDefaultNumBuckets;

  bool empty() const { return entries.empty(); }
  std::uint64_t total_count() const;
  bool operator==(const HashedFeatures&) const = default;
};

bool is_power_of_two(std::uint32_t n);

HashedFeatures featurize(std::string_view text, std::uint32_t num_buckets = kDefaultNumBuckets);

}  // namespace pairmine
