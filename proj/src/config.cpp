#include "hatl/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hatl/errors.hpp"

namespace hatl {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, const std::string& source) {
  KeyValues kv;
  kv.source_ = source;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected `key = value`");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    if (kv.values_.count(key))
      throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key " + key);
    kv.values_[key] = value;
    kv.lines_[key] = line_no;
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str(), path);
}

std::string KeyValues::where(const std::string& key) const {
  auto it = lines_.find(key);
  if (it == lines_.end()) return "override " + key;
  return source_ + ":" + std::to_string(it->second) + ": " + key;
}

const std::string* KeyValues::take(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  consumed_.insert(key);
  return &it->second;
}

long KeyValues::get_long(const std::string& key, long fallback) {
  const std::string* v = take(key);
  if (!v) return fallback;
  errno = 0;
  char* end = nullptr;
  const long out = std::strtol(v->c_str(), &end, 10);
  if (v->empty() || *end != '\0' || errno != 0) throw ConfigError(where(key) + ": expected an integer, got '" + *v + "'");
  return out;
}

int KeyValues::get_int(const std::string& key, int fallback) {
  const long v = get_long(key, fallback);
  if (v < INT32_MIN || v > INT32_MAX) throw ConfigError(where(key) + ": integer out of range");
  return static_cast<int>(v);
}

double KeyValues::get_double(const std::string& key, double fallback) {
  const std::string* v = take(key);
  if (!v) return fallback;
  errno = 0;
  char* end = nullptr;
  const double out = std::strtod(v->c_str(), &end);
  if (v->empty() || *end != '\0' || errno != 0) throw ConfigError(where(key) + ": expected a number, got '" + *v + "'");
  return out;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) {
  const std::string* v = take(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(where(key) + ": expected true or false, got '" + *v + "'");
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) {
  const std::string* v = take(key);
  return v ? *v : fallback;
}

void KeyValues::set(const std::string& key, const std::string& value) {
  values_[key] = value;
  lines_.erase(key);
}

void KeyValues::require_consumed() const {
  std::string unknown;
  for (const auto& [k, v] : values_)
    if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + where(k);
  if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
}

}  // namespace hatl
