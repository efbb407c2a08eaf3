#include "pairmine/config.hpp"

#include <charconv>
#include <cmath>

#include "pairmine/error.hpp"
#include "pairmine/util.hpp"

namespace pairmine {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(std::string_view v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  return std::string(v);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ConfigError("config key '" + std::string(key) + "': expected " + std::string(want) +
                    ", got '" + std::string(value) + "'");
}

template <typename T>
T parse_integer(std::string_view key, std::string_view v, std::string_view want) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, want);
  return out;
}

}  // namespace

FlatConfig FlatConfig::parse(std::string_view content, std::string_view what) {
  FlatConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const std::string_view line = trim(content.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const std::string key(trim(line.substr(0, eq == std::string_view::npos ? 0 : eq)));
    if (eq == std::string_view::npos || key.empty()) {
      throw ConfigError(std::string(what) + ": line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    if (cfg.entries_.count(key)) {
      throw ConfigError(std::string(what) + ": line " + std::to_string(line_no) +
                        ": duplicate key '" + key + "'");
    }
    cfg.entries_.emplace(key, unquote(trim(line.substr(eq + 1))));
  }
  return cfg;
}

FlatConfig FlatConfig::load(const std::filesystem::path& path) {
  std::string content;
  try {
    content = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  FlatConfig cfg = parse(content, path.string());
  cfg.base_dir_ = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return cfg;
}

void FlatConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || trim(assignment.substr(0, eq)).empty()) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  set(std::string(trim(assignment.substr(0, eq))), unquote(trim(assignment.substr(eq + 1))));
}

void FlatConfig::set(std::string key, std::string value) { entries_[std::move(key)] = std::move(value); }

bool FlatConfig::has(std::string_view key) const { return entries_.find(key) != entries_.end(); }

std::optional<std::string> FlatConfig::get(std::string_view key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string FlatConfig::get_string(std::string_view key, std::string_view fallback) const {
  return get(key).value_or(std::string(fallback));
}

std::int64_t FlatConfig::get_int(std::string_view key, std::int64_t fallback) const {
  const auto v = get(key);
  return v ? parse_integer<std::int64_t>(key, *v, "an integer") : fallback;
}

std::uint64_t FlatConfig::get_u64(std::string_view key, std::uint64_t fallback) const {
  const auto v = get(key);
  return v ? parse_integer<std::uint64_t>(key, *v, "an unsigned integer") : fallback;
}

double FlatConfig::get_double(std::string_view key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || p != v->data() + v->size() || !std::isfinite(out)) {
    bad_value(key, *v, "a finite number");
  }
  return out;
}

bool FlatConfig::get_bool(std::string_view key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  bad_value(key, *v, "true or false");
}

std::optional<std::filesystem::path> FlatConfig::get_path(std::string_view key) const {
  const auto v = get(key);
  if (!v || v->empty()) return std::nullopt;
  std::filesystem::path p(*v);
  return p.is_absolute() ? p : base_dir_ / p;
}

void FlatConfig::reject_unknown(const std::set<std::string, std::less<>>& known) const {
  for (const auto& [k, v] : entries_) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
}

}  // namespace pairmine
