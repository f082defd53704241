#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kmpc {

// Minimal reader for the TOML subset used by the shipped configs:
// [section] and [section.sub] headers, `key = value` pairs, comments
// starting with '#', and values that are numbers, booleans, quoted
// strings, or flat arrays of those. Keys are addressed as "section.key".
class ConfigFile {
 public:
  struct Value {
    enum class Type { Number, Bool, String, Array } type = Type::Number;
    double number = 0.0;
    bool boolean = false;
    std::string text;
    std::vector<Value> items;
    int line = 0;
  };

  static ConfigFile parse(const std::string& text,
                          const std::string& origin = "<string>");
  static ConfigFile load(const std::string& path);

  bool has(const std::string& key) const;
  std::vector<std::string> keys() const;
  const std::string& origin() const { return origin_; }

  double get_double(const std::string& key, double fallback) const;
  double require_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const;
  std::vector<std::string> get_strings(
      const std::string& key, const std::vector<std::string>& fallback) const;

  // Canonical "key = value" listing, sorted by key. Used for hashing.
  std::string canonical() const;

 private:
  const Value* find(const std::string& key) const;
  [[noreturn]] void type_error(const std::string& key, const Value& v,
                               const char* expected) const;

  std::string origin_;
  std::map<std::string, Value> values_;
};

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace kmpc
