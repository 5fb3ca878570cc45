#include "meir/config.hpp"

#include <charconv>
#include <cmath>

#include "meir/core.hpp"
#include "meir/error.hpp"

namespace meir {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  fail(ErrorCode::invalid_argument,
       "config key '" + key + "': expected " + want + ", got '" + value + "'");
}

}  // namespace

Config Config::parse(std::string_view text, std::string_view origin) {
  Config cfg;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    const auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorCode::format, std::string(origin) + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) {
      fail(ErrorCode::format, std::string(origin) + ":" + std::to_string(lineno) + ": empty key");
    }
    cfg.set(std::string(key), std::string(trim(line.substr(eq + 1))));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  return parse(read_file(path), path.string());
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    bad_value(key, s, "a number");
  }
  return v;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) bad_value(key, s, "an integer");
  return v;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
  const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) bad_value(key, values_.at(key), "a non-negative integer");
  return static_cast<std::size_t>(v);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(key, s, "a boolean");
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace meir
