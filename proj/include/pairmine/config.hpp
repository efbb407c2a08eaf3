#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace pairmine {

// Flat "key = value" document. Blank lines and lines starting with '#' are
// ignored; keys may contain dots ("bi.steps"). Values are trimmed and may be
// wrapped in double quotes.
class FlatConfig {
 public:
  static FlatConfig parse(std::string_view content, std::string_view what = "config");
  static FlatConfig load(const std::filesystem::path& path);

  // Applies "key=value"; throws ConfigError when there is no '='.
  void apply_override(std::string_view assignment);
  void set(std::string key, std::string value);
  bool has(std::string_view key) const;

  std::optional<std::string> get(std::string_view key) const;
  std::string get_string(std::string_view key, std::string_view fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  // Relative paths resolve against the config file's directory.
  std::optional<std::filesystem::path> get_path(std::string_view key) const;

  // Throws ConfigError naming the first key not in known.
  void reject_unknown(const std::set<std::string, std::less<>>& known) const;

  const std::map<std::string, std::string, std::less<>>& entries() const { return entries_; }
  const std::filesystem::path& base_dir() const { return base_dir_; }
  void set_base_dir(std::filesystem::path dir) { base_dir_ = std::move(dir); }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
  std::filesystem::path base_dir_ = ".";
};

}  // namespace pairmine
