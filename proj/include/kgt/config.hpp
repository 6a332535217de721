#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kgt/error.hpp"

namespace kgt {

enum class ConfigType { Int, Real, Word, IntList };

struct ConfigKey {
  std::string name;
  ConfigType type;
  std::string default_value;
  std::string doc;
};

/// Flat `key = value` settings for the network and training loop.
///
/// Every key is known in advance (see `Config::keys()`); unknown keys are
/// rejected so a typo never silently falls back to a default.
class Config {
 public:
  /// All keys with defaults applied.
  Config();

  static const std::vector<ConfigKey>& keys();

  /// Validates the value against the key's type; throws ConfigError.
  void set(std::string_view key, std::string_view value);
  const std::string& get(std::string_view key) const;

  std::int64_t get_int(std::string_view key) const;
  double get_real(std::string_view key) const;
  std::vector<std::int64_t> get_int_list(std::string_view key) const;

  /// Canonical text: every key in declaration order.
  std::string to_text() const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

/// Parses config text: one `key = value` per line, `#` comments, blank
/// lines ignored, later duplicates override earlier ones.
Config parse_config(std::string_view text);

Config load_config(const std::string& path);

}  // namespace kgt
