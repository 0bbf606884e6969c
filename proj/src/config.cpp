#include "gridmarket/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "gridmarket/csv.hpp"

namespace gridmarket {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool is_number(const std::string& s) {
  if (s.empty()) return false;
  try {
    size_t used = 0;
    (void)std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

Config Config::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path.string());
  std::ostringstream oss;
  oss << in.rdbuf();
  return parse_string(oss.str());
}

Config Config::parse_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments outside quotes
    bool in_quote = false;
    for (size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quote = !in_quote;
      if (line[i] == '#' && !in_quote) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", lineno, 1);
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ParseError("empty section name", lineno, 1);
      if (std::find(cfg.section_order_.begin(), cfg.section_order_.end(), section) ==
          cfg.section_order_.end())
        cfg.section_order_.push_back(section);
      cfg.data_[section];
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno, 1);
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", lineno, 1);
    if (section.empty()) throw ParseError("key outside any [section]", lineno, 1);
    Value v;
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"') {
      v.raw = val.substr(1, val.size() - 2);
      v.quoted = true;
    } else if (val == "true" || val == "false") {
      v.raw = val;
    } else if (is_number(val)) {
      v.raw = val;
    } else {
      throw ParseError("value must be a number, boolean, or quoted string: '" + val + "'", lineno,
                       static_cast<int>(eq) + 2);
    }
    cfg.data_[section][key] = v;
  }
  return cfg;
}

const Config::Value& Config::lookup(const std::string& section, const std::string& key) const {
  auto sit = data_.find(section);
  if (sit == data_.end()) throw ValidationError("missing config section [" + section + "]");
  auto kit = sit->second.find(key);
  if (kit == sit->second.end())
    throw ValidationError("missing config key '" + key + "' in [" + section + "]");
  return kit->second;
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto sit = data_.find(section);
  return sit != data_.end() && sit->second.count(key) > 0;
}

std::string Config::get_string(const std::string& section, const std::string& key) const {
  return lookup(section, key).raw;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return has(section, key) ? get_string(section, key) : fallback;
}

double Config::get_number(const std::string& section, const std::string& key) const {
  const Value& v = lookup(section, key);
  if (!is_number(v.raw))
    throw ValidationError("config key '" + key + "' in [" + section + "] is not a number");
  return std::stod(v.raw);
}

double Config::get_number(const std::string& section, const std::string& key,
                          double fallback) const {
  return has(section, key) ? get_number(section, key) : fallback;
}

long Config::get_integer(const std::string& section, const std::string& key, long fallback) const {
  if (!has(section, key)) return fallback;
  double v = get_number(section, key);
  long r = static_cast<long>(v);
  if (static_cast<double>(r) != v)
    throw ValidationError("config key '" + key + "' in [" + section + "] is not an integer");
  return r;
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string& raw = lookup(section, key).raw;
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw ValidationError("config key '" + key + "' in [" + section + "] is not a boolean");
}

void Config::put(const std::string& section, const std::string& key, Value v) {
  if (data_.find(section) == data_.end()) section_order_.push_back(section);
  data_[section][key] = std::move(v);
}

void Config::set_string(const std::string& section, const std::string& key,
                        const std::string& value) {
  put(section, key, {value, true});
}

void Config::set_number(const std::string& section, const std::string& key, double value) {
  put(section, key, {format_double(value), false});
}

void Config::set_integer(const std::string& section, const std::string& key, long value) {
  put(section, key, {std::to_string(value), false});
}

void Config::set_bool(const std::string& section, const std::string& key, bool value) {
  put(section, key, {value ? "true" : "false", false});
}

std::vector<std::string> Config::sections() const { return section_order_; }

std::vector<std::string> Config::keys(const std::string& section) const {
  std::vector<std::string> out;
  auto sit = data_.find(section);
  if (sit == data_.end()) return out;
  for (const auto& [k, v] : sit->second) out.push_back(k);
  return out;
}

std::string Config::emit() const {
  std::ostringstream oss;
  bool first = true;
  for (const auto& section : section_order_) {
    if (!first) oss << "\n";
    first = false;
    oss << "[" << section << "]\n";
    auto sit = data_.find(section);
    for (const auto& [key, val] : sit->second) {
      oss << key << " = ";
      if (val.quoted)
        oss << '"' << val.raw << '"';
      else
        oss << val.raw;
      oss << "\n";
    }
  }
  return oss.str();
}

}  // namespace gridmarket
