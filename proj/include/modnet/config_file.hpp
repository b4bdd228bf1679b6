#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "modnet/common.hpp"

namespace modnet {

// Flat key-value run configuration: one `section.key = value` per line,
// '#' comments, blank lines ignored. Parse errors carry line numbers, typed
// getters carry the offending value.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;  // comma-separated
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // typo guard: every present key must have been read by a getter
  void ensure_all_consumed() const;
  const std::string& origin() const { return origin_; }

 private:
  std::string describe(const std::string& key) const;
  std::map<std::string, std::pair<std::string, int>> values_;  // key -> (value, line)
  mutable std::set<std::string> consumed_;
  std::string origin_;
};

}  // namespace modnet
