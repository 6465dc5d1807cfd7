#include "dbce/config.hpp"

#include <fstream>
#include <sstream>

namespace dbce {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::from_string(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected `key = value`, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    }
    if (cfg.entries_.count(key)) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" +
                        key + "'");
    }
    cfg.entries_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

std::string KeyValueConfig::get_str(const std::string& key, const std::string& def) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? def : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double def) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  try {
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + it->second + "'");
  }
}

int KeyValueConfig::get_int(const std::string& key, int def) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  try {
    size_t pos = 0;
    const long v = std::stol(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + it->second + "'");
  }
}

uint64_t KeyValueConfig::get_u64(const std::string& key, uint64_t def) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  try {
    size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return static_cast<uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" +
                      it->second + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool def) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

void KeyValueConfig::check_known(const std::set<std::string>& known) const {
  for (const auto& [key, value] : entries_) {
    (void)value;
    if (known.count(key) == 0) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

}  // namespace dbce
