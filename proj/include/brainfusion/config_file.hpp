#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace brainfusion {

/// Flat `key = value` configuration. '#' starts a comment; later
/// assignments override earlier ones. Unknown keys are rejected against a
/// caller-supplied schema so typos surface as ConfigError naming the key.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  /// Applies "key=value".
  void set_assignment(std::string_view assignment);
  void set(std::string key, std::string value);
  void merge(const KeyValueConfig& overrides);

  bool contains(const std::string& key) const { return values_.contains(key); }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void validate_keys(const std::set<std::string>& known) const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  /// Sorted `key = value` lines; stable input for hashing.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace brainfusion
