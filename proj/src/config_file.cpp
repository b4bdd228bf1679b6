#include "modnet/config_file.hpp"

#include <fstream>
#include <sstream>

namespace modnet {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + s + "'");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty())
      throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key))
      throw ParseError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                       "' (first set on line " + std::to_string(cfg.values_[key].second) + ")");
    cfg.values_[key] = {value, lineno};
  }
  return cfg;
}

std::string ConfigFile::describe(const std::string& key) const {
  auto it = values_.find(key);
  return origin_ + ":" + std::to_string(it->second.second) + ": key '" + key + "'";
}

std::string ConfigFile::get_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  consumed_.insert(key);
  return it->second.first;
}

std::string ConfigFile::get_str(const std::string& key, const std::string& fallback) const {
  if (!has(key)) return fallback;
  return get_str(key);
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_str(key);
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(describe(key) + " is not a number: '" + v + "'");
  }
}

int ConfigFile::get_int(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_str(key);
  try {
    size_t pos = 0;
    long n = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(n);
  } catch (const std::exception&) {
    throw ConfigError(describe(key) + " is not an integer: '" + v + "'");
  }
}

uint64_t ConfigFile::get_u64(const std::string& key, uint64_t fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_str(key);
  try {
    size_t pos = 0;
    uint64_t n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(describe(key) + " is not an unsigned integer: '" + v + "'");
  }
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_str(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(describe(key) + " is not a boolean: '" + v + "'");
}

std::vector<std::string> ConfigFile::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::string v = get_str(key);
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError(describe(key) + " is an empty list");
  return out;
}

std::vector<double> ConfigFile::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (auto& item : get_list(key)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError(describe(key) + " has a non-numeric element: '" + item + "'");
    }
  }
  return out;
}

std::vector<int> ConfigFile::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (double d : get_double_list(key)) out.push_back(static_cast<int>(d));
  return out;
}

void ConfigFile::ensure_all_consumed() const {
  for (auto& [key, vl] : values_) {
    if (!consumed_.count(key))
      throw ConfigError(origin_ + ":" + std::to_string(vl.second) + ": unknown key '" + key + "'");
  }
}

}  // namespace modnet
