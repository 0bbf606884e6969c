#include "gridmarket/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gridmarket {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace
    size_t a = cell.find_first_not_of(" \t\r");
    size_t b = cell.find_last_not_of(" \t\r");
    cells.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
  }
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

double CsvTable::number(size_t row, int col) const {
  const std::string& cell = rows[row][static_cast<size_t>(col)];
  try {
    size_t used = 0;
    double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + cell + "'", static_cast<int>(row) + 2, col + 1);
  }
}

long CsvTable::integer(size_t row, int col) const {
  const std::string& cell = rows[row][static_cast<size_t>(col)];
  try {
    size_t used = 0;
    long v = std::stol(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw ParseError("not an integer: '" + cell + "'", static_cast<int>(row) + 2, col + 1);
  }
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  CsvTable table;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      table.comments.push_back(line);
      continue;
    }
    if (!header_seen) {
      table.header = split_line(line);
      header_seen = true;
      continue;
    }
    auto cells = split_line(line);
    if (cells.size() != table.header.size())
      throw ParseError("expected " + std::to_string(table.header.size()) + " cells, got " +
                           std::to_string(cells.size()),
                       static_cast<int>(table.rows.size()) + 2, 1);
    table.rows.push_back(std::move(cells));
  }
  if (!header_seen) throw ParseError("file has no header row: " + path.string(), 1, 1);
  return table;
}

void CsvWriter::comment(const std::string& line) { comments_.push_back("# " + line); }

void CsvWriter::set_header(const std::vector<std::string>& names) { header_ = names; }

void CsvWriter::add_row(const std::vector<std::string>& cells) { rows_.push_back(cells); }

std::string CsvWriter::str() const {
  std::ostringstream oss;
  for (const auto& c : comments_) oss << c << "\n";
  for (size_t i = 0; i < header_.size(); ++i) oss << (i ? "," : "") << header_[i];
  oss << "\n";
  for (const auto& row : rows_) {
    for (size_t i = 0; i < row.size(); ++i) oss << (i ? "," : "") << row[i];
    oss << "\n";
  }
  return oss.str();
}

std::string format_double(double v) {
  // %.17g always round-trips; prefer the shortest representation that does.
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) return buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write file: " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

}  // namespace gridmarket
