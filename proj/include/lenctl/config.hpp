#pragma once

// Declarative key/value configuration.
//
//   # comment
//   synth.pairs = 2000
//   decode.scales = 0.93, 1.0, 1.1, 1.2
//
// Keys are dotted names; values run to end of line. Unknown keys are rejected
// by validate(), and every lookup error names the offending key.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lenctl {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& message)
      : std::runtime_error("config key '" + key + "': " + message), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::string> get_strings(const std::string& key,
                                       const std::vector<std::string>& fallback) const;

  // Throws ConfigError for the first key not in `allowed`.
  void validate(const std::set<std::string>& allowed) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  // Canonical "key = value" text, sorted by key.
  std::string canonical() const;
  // Stable 64-bit hash of canonical(), as 16 hex digits.
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
};

// FNV-1a 64-bit, hex encoded.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace lenctl
