#include "kmpc/config_file.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "kmpc/error.hpp"

namespace kmpc {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
          c == '-' || c == '.'))
      return false;
  }
  return k.front() != '.' && k.back() != '.';
}

// Strip a trailing comment, ignoring '#' inside quoted strings.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

class ValueParser {
 public:
  ValueParser(const std::string& s, const std::string& where)
      : s_(s), where_(where) {}

  ConfigFile::Value parse_all() {
    ConfigFile::Value v = parse_value();
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters after value");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) {
    throw config_error(where_ + ": " + msg);
  }
  void skip_ws() {
    while (pos_ < s_.size() &&
           std::isspace(static_cast<unsigned char>(s_[pos_])))
      ++pos_;
  }
  ConfigFile::Value parse_value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    ConfigFile::Value v;
    char c = s_[pos_];
    if (c == '"') {
      v.type = ConfigFile::Value::Type::String;
      ++pos_;
      while (pos_ < s_.size() && s_[pos_] != '"') {
        if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) ++pos_;
        v.text.push_back(s_[pos_++]);
      }
      if (pos_ >= s_.size()) fail("unterminated string");
      ++pos_;
      return v;
    }
    if (c == '[') {
      v.type = ConfigFile::Value::Type::Array;
      ++pos_;
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == ']') {
        ++pos_;
        return v;
      }
      while (true) {
        ConfigFile::Value item = parse_value();
        if (item.type == ConfigFile::Value::Type::Array)
          fail("nested arrays are not supported; use a flat row-major array");
        v.items.push_back(item);
        skip_ws();
        if (pos_ >= s_.size()) fail("unterminated array");
        if (s_[pos_] == ',') {
          ++pos_;
          skip_ws();
          if (pos_ < s_.size() && s_[pos_] == ']') {
            ++pos_;
            return v;
          }
          continue;
        }
        if (s_[pos_] == ']') {
          ++pos_;
          return v;
        }
        fail("expected ',' or ']' in array");
      }
    }
    std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' &&
           !std::isspace(static_cast<unsigned char>(s_[pos_])))
      ++pos_;
    std::string tok = s_.substr(start, pos_ - start);
    if (tok == "true" || tok == "false") {
      v.type = ConfigFile::Value::Type::Bool;
      v.boolean = tok == "true";
      return v;
    }
    std::string cleaned;
    for (char ch : tok)
      if (ch != '_') cleaned.push_back(ch);
    if (cleaned == "inf" || cleaned == "+inf") {
      v.number = HUGE_VAL;
      return v;
    }
    if (cleaned == "-inf") {
      v.number = -HUGE_VAL;
      return v;
    }
    char* end = nullptr;
    v.number = std::strtod(cleaned.c_str(), &end);
    if (cleaned.empty() || end != cleaned.c_str() + cleaned.size())
      fail("cannot parse value '" + tok + "'");
    return v;
  }

  const std::string& s_;
  std::string where_;
  std::size_t pos_ = 0;
};

std::string render(const ConfigFile::Value& v) {
  using T = ConfigFile::Value::Type;
  switch (v.type) {
    case T::Number: {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v.number);
      return buf;
    }
    case T::Bool: return v.boolean ? "true" : "false";
    case T::String: return "\"" + v.text + "\"";
    case T::Array: {
      std::string out = "[";
      for (std::size_t i = 0; i < v.items.size(); ++i) {
        if (i) out += ", ";
        out += render(v.items[i]);
      }
      return out + "]";
    }
  }
  return "";
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text,
                             const std::string& origin) {
  ConfigFile cf;
  cf.origin_ = origin;
  std::istringstream in(text);
  std::string raw, section;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string where = origin + ":" + std::to_string(lineno);
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw config_error(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_key(section))
        throw config_error(where + ": invalid section name '" + section + "'");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error(where + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    if (!valid_key(key))
      throw config_error(where + ": invalid key '" + key + "'");
    std::string full = section.empty() ? key : section + "." + key;
    if (cf.values_.count(full))
      throw config_error(where + ": duplicate key '" + full + "'");
    Value v = ValueParser(line.substr(eq + 1), where).parse_all();
    v.line = lineno;
    cf.values_[full] = v;
  }
  return cf;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

bool ConfigFile::has(const std::string& key) const {
  return values_.count(key) != 0;
}

std::vector<std::string> ConfigFile::keys() const {
  std::vector<std::string> out;
  for (const auto& kv : values_) out.push_back(kv.first);
  return out;
}

const ConfigFile::Value* ConfigFile::find(const std::string& key) const {
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

void ConfigFile::type_error(const std::string& key, const Value& v,
                            const char* expected) const {
  throw config_error(origin_ + ":" + std::to_string(v.line) + ": key '" + key +
                     "' must be " + expected);
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  const Value* v = find(key);
  if (!v) return fallback;
  if (v->type != Value::Type::Number) type_error(key, *v, "a number");
  return v->number;
}

double ConfigFile::require_double(const std::string& key) const {
  const Value* v = find(key);
  if (!v) throw config_error(origin_ + ": missing required key '" + key + "'");
  return get_double(key, 0.0);
}

std::int64_t ConfigFile::get_int(const std::string& key,
                                 std::int64_t fallback) const {
  const Value* v = find(key);
  if (!v) return fallback;
  if (v->type != Value::Type::Number || v->number != std::floor(v->number))
    type_error(key, *v, "an integer");
  return static_cast<std::int64_t>(v->number);
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  const Value* v = find(key);
  if (!v) return fallback;
  if (v->type != Value::Type::Bool) type_error(key, *v, "true or false");
  return v->boolean;
}

std::string ConfigFile::get_string(const std::string& key,
                                   const std::string& fallback) const {
  const Value* v = find(key);
  if (!v) return fallback;
  if (v->type != Value::Type::String) type_error(key, *v, "a quoted string");
  return v->text;
}

std::vector<double> ConfigFile::get_doubles(
    const std::string& key, const std::vector<double>& fallback) const {
  const Value* v = find(key);
  if (!v) return fallback;
  if (v->type == Value::Type::Number) return {v->number};
  if (v->type != Value::Type::Array) type_error(key, *v, "an array of numbers");
  std::vector<double> out;
  for (const auto& item : v->items) {
    if (item.type != Value::Type::Number)
      type_error(key, *v, "an array of numbers");
    out.push_back(item.number);
  }
  return out;
}

std::vector<std::string> ConfigFile::get_strings(
    const std::string& key, const std::vector<std::string>& fallback) const {
  const Value* v = find(key);
  if (!v) return fallback;
  if (v->type == Value::Type::String) return {v->text};
  if (v->type != Value::Type::Array) type_error(key, *v, "an array of strings");
  std::vector<std::string> out;
  for (const auto& item : v->items) {
    if (item.type != Value::Type::String)
      type_error(key, *v, "an array of strings");
    out.push_back(item.text);
  }
  return out;
}

std::string ConfigFile::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + render(v) + "\n";
  return out;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace kmpc
