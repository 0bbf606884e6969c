#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gridmarket/types.hpp"

namespace gridmarket {

// Minimal sectioned key/value config:
//
//   [section]
//   key = value        # comment
//
// Values are bare numbers, booleans, or double-quoted strings. Emission is
// canonical (insertion-ordered sections, sorted keys) so a parse/emit cycle
// is byte-stable.
class Config {
 public:
  static Config parse_file(const std::filesystem::path& path);
  static Config parse_string(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_number(const std::string& section, const std::string& key) const;
  double get_number(const std::string& section, const std::string& key, double fallback) const;
  long get_integer(const std::string& section, const std::string& key, long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  void set_string(const std::string& section, const std::string& key, const std::string& value);
  void set_number(const std::string& section, const std::string& key, double value);
  void set_integer(const std::string& section, const std::string& key, long value);
  void set_bool(const std::string& section, const std::string& key, bool value);

  std::vector<std::string> sections() const;
  std::vector<std::string> keys(const std::string& section) const;

  std::string emit() const;

 private:
  struct Value {
    std::string raw;   // canonical emitted text
    bool quoted = false;
  };
  // section -> key -> value; section order preserved separately
  std::map<std::string, std::map<std::string, Value>> data_;
  std::vector<std::string> section_order_;
  const Value& lookup(const std::string& section, const std::string& key) const;
  void put(const std::string& section, const std::string& key, Value v);
};

}  // namespace gridmarket
