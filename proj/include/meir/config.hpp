#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace meir {

/// Plain-text `key = value` settings. Lines starting with '#' are comments.
/// Later assignments override earlier ones, so command-line overrides are
/// applied with set() after load().
class Config {
 public:
  Config() = default;
  explicit Config(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  static Config parse(std::string_view text, std::string_view origin = "<config>");
  static Config load(const std::filesystem::path& path);

  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  bool has(const std::string& key) const { return values_.contains(key); }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string format_double(double v);

}  // namespace meir
