#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gridmarket/types.hpp"

namespace gridmarket {

struct CsvTable {
  std::vector<std::string> comments;  // leading '#' lines, kept verbatim
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
  double number(size_t row, int col) const;
  long integer(size_t row, int col) const;
};

CsvTable read_csv(const std::filesystem::path& path);

class CsvWriter {
 public:
  void comment(const std::string& line);
  void set_header(const std::vector<std::string>& names);
  void add_row(const std::vector<std::string>& cells);
  std::string str() const;

 private:
  std::vector<std::string> comments_, header_;
  std::vector<std::vector<std::string>> rows_;
};

// Shortest round-trip decimal formatting; parsing it back recovers the exact
// double, which keeps emit -> load -> emit byte-stable.
std::string format_double(double v);

// Write-temp-then-rename so partially written files never appear.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace gridmarket
