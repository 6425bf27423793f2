#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace uu {

// Line-oriented "section.key = value" text. '#' starts a comment; list
// values are comma separated. Reads are tracked so callers can reject
// unknown keys.
class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in);
  static ConfigFile load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;
  std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key, std::vector<std::size_t> fallback) const;

  // Keys present in the file that were never read.
  std::vector<std::string> unread_keys() const;
  // Throws ConfigError naming the first unread key.
  void reject_unread() const;
  // Sorted "key = value" lines; stable input for hashing.
  std::string canonical() const;

 private:
  const std::string* lookup(const std::string& key) const;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
};

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace uu
