#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wagemix {

/// Flat `key = value` configuration. Lines starting with '#' are comments;
/// list values are separated by whitespace or commas.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>");
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& raw(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<long long> get_ints(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Sorted `key = value` lines; the basis for config hashing.
  std::string canonical_text() const;

 private:
  std::map<std::string, std::string> entries_;
  std::string source_;
};

std::vector<std::string> split_list(const std::string& value);

}  // namespace wagemix
