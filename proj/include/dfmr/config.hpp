#pragma once
// Flat key=value experiment configuration. One file drives simulation,
// reconstruction, and evaluation so an experiment is reproducible from a
// single artifact. Lines are `key = value`; '#' starts a comment. Keys are
// tracked as they are consumed so unknown (usually misspelled) keys can be
// rejected instead of silently ignored.

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dfmr/errors.hpp"
#include "dfmr/sequence.hpp"

namespace dfmr {

class ConfigMap {
 public:
  static ConfigMap from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open '" + path + "'");
    ConfigMap cfg;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
      lineno += 1;
      std::string s = strip_comment(line);
      if (s.empty()) continue;
      size_t eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                          ": expected key = value");
      std::string key = trim(s.substr(0, eq));
      std::string value = trim(s.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                          ": empty key");
      if (cfg.values_.count(key) != 0)
        throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                          ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  // Command-line style override "key=value"; replaces any file value.
  void set_override(const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("config: override '" + kv + "' is not key=value");
    values_[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    return it->second;
  }

  int64_t get_int(const std::string& key, int64_t dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    return parse_int(key, it->second);
  }

  double get_double(const std::string& key, double dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    return parse_double(key, it->second);
  }

  bool get_bool(const std::string& key, bool dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: key '" + key + "' expects a boolean, got '" +
                      v + "'");
  }

  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    std::vector<double> out;
    for (const std::string& item : split_commas(key, it->second))
      out.push_back(parse_double(key, item));
    return out;
  }

  std::vector<int64_t> get_int_list(const std::string& key,
                                    std::vector<int64_t> dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    std::vector<int64_t> out;
    for (const std::string& item : split_commas(key, it->second))
      out.push_back(parse_int(key, item));
    return out;
  }

  // Keys present but never consumed by any accessor: almost always typos.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [key, value] : values_)
      if (consumed_.count(key) == 0) out.push_back(key);
    return out;
  }

  void reject_unused() const {
    std::vector<std::string> extra = unused_keys();
    if (extra.empty()) return;
    std::string msg = "config: unknown key(s):";
    for (const std::string& k : extra) msg += " '" + k + "'";
    throw ConfigError(msg);
  }

 private:
  static std::string strip_comment(const std::string& line) {
    size_t hash = line.find('#');
    return trim(hash == std::string::npos ? line : line.substr(0, hash));
  }

  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  static std::vector<std::string> split_commas(const std::string& key,
                                               const std::string& v) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= v.size()) {
      size_t comma = v.find(',', start);
      std::string item =
          trim(comma == std::string::npos ? v.substr(start)
                                          : v.substr(start, comma - start));
      if (item.empty())
        throw ConfigError("config: key '" + key + "' has an empty list item");
      out.push_back(item);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }

  static int64_t parse_int(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    long long n = std::strtoll(v.c_str(), &end, 10);
    if (errno != 0 || end == v.c_str() || *end != '\0')
      throw ConfigError("config: key '" + key + "' expects an integer, got '" +
                        v + "'");
    return static_cast<int64_t>(n);
  }

  static double parse_double(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    double d = std::strtod(v.c_str(), &end);
    if (errno != 0 || end == v.c_str() || *end != '\0' || !std::isfinite(d))
      throw ConfigError("config: key '" + key +
                        "' expects a finite number, got '" + v + "'");
    return d;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

}  // namespace dfmr
