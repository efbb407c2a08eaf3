#include "pairmine/features.hpp"

#include <map>
#include <string>

#include "pairmine/error.hpp"
#include "pairmine/text.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

std::uint64_t HashedFeatures::total_count() const {
  std::uint64_t n = 0;
  for (const auto& e : entries) n += e.second;
  return n;
}

bool is_power_of_two(std::uint32_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace {

// Unit separator keeps "a b" + "c" from colliding with "a" + "b c".
constexpr char kSep = '\x1f';

std::uint32_t bucket_of(std::string_view kind, std::string_view a, std::string_view b,
                        std::uint32_t mask) {
  std::uint64_t h = fnv1a64(kind);
  h = fnv1a64(std::string_view(&kSep, 1), h);
  h = fnv1a64(a, h);
  if (!b.empty()) {
    h = fnv1a64(std::string_view(&kSep, 1), h);
    h = fnv1a64(b, h);
  }
  return static_cast<std::uint32_t>(mix64(h)) & mask;
}

}  // namespace

HashedFeatures featurize(std::string_view text, std::uint32_t num_buckets) {
  if (!is_power_of_two(num_buckets)) {
    throw ConfigError("num_buckets must be a power of two, got " + std::to_string(num_buckets));
  }
  const std::uint32_t mask = num_buckets - 1;
  const std::vector<std::string> tokens = tokenize(text);
  std::map<std::uint32_t, std::uint32_t> counts;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    ++counts[bucket_of("u", tokens[i], {}, mask)];
    if (i + 1 < tokens.size()) ++counts[bucket_of("b", tokens[i], tokens[i + 1], mask)];
  }
  HashedFeatures f;
  f.num_buckets = num_buckets;
  f.entries.assign(counts.begin(), counts.end());
  return f;
}

}  // namespace pairmine
