#pragma once

// `key = value` files: one entry per line, `#` starts a comment, blank lines
// are ignored. Readers pull typed values by key; any key left unread is an
// error, which catches typos.

#include <map>
#include <set>
#include <string>
#include <string_view>

namespace hatl {

class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& source = "<string>");
  static KeyValues load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  // Each returns `fallback` when the key is absent. Malformed values throw
  // ConfigError naming the source line.
  int get_int(const std::string& key, int fallback);
  long get_long(const std::string& key, long fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::string get_string(const std::string& key, const std::string& fallback);

  // Sets or overrides a value (command-line overrides).
  void set(const std::string& key, const std::string& value);

  // Throws ConfigError listing every key never read.
  void require_consumed() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::string where(const std::string& key) const;
  const std::string* take(const std::string& key);

  std::string source_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
  std::set<std::string> consumed_;
};

}  // namespace hatl
