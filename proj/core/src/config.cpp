#include "uu/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "uu/errors.hpp"

namespace uu {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw ConfigError("config key '" + key + "': cannot parse value '" + value + "'");
}

double to_double(const std::string& key, const std::string& v) {
  if (v == "inf") return INFINITY;
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

template <typename T>
T to_integer(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v);
  return out;
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& in) {
  ConfigFile cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'section.key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || key.find('.') == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": key must look like section.key");
    }
    cfg.values_[key] = value;
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in);
}

const std::string* ConfigFile::lookup(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  read_.insert(key);
  return &it->second;
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  const auto* v = lookup(key);
  return v ? *v : fallback;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  const auto* v = lookup(key);
  return v ? to_double(key, *v) : fallback;
}

std::int64_t ConfigFile::get_int(const std::string& key, std::int64_t fallback) const {
  const auto* v = lookup(key);
  return v ? to_integer<std::int64_t>(key, *v) : fallback;
}

std::uint64_t ConfigFile::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto* v = lookup(key);
  return v ? to_integer<std::uint64_t>(key, *v) : fallback;
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  const auto* v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  bad_value(key, *v);
}

std::vector<double> ConfigFile::get_doubles(const std::string& key, std::vector<double> fallback) const {
  const auto* v = lookup(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(*v)) out.push_back(to_double(key, item));
  return out;
}

std::vector<std::string> ConfigFile::get_strings(const std::string& key,
                                                std::vector<std::string> fallback) const {
  const auto* v = lookup(key);
  return v ? split_list(*v) : fallback;
}

std::vector<std::size_t> ConfigFile::get_sizes(const std::string& key,
                                               std::vector<std::size_t> fallback) const {
  const auto* v = lookup(key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  for (const auto& item : split_list(*v)) out.push_back(to_integer<std::size_t>(key, item));
  return out;
}

std::vector<std::string> ConfigFile::unread_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!read_.count(k)) out.push_back(k);
  }
  return out;
}

void ConfigFile::reject_unread() const {
  const auto extra = unread_keys();
  if (!extra.empty()) throw ConfigError("unknown config key '" + extra.front() + "'");
}

std::string ConfigFile::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace uu
