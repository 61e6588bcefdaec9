// Minimal CSV reading/writing: comma separated, header row, UTF-8.
// Doubles are printed with std::to_chars so equal values always produce
// equal bytes (shortest round-trip form).
#pragma once

#include "epiout/core.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace epiout {

inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  }

  void header(const std::vector<std::string>& cols) { row_strings(cols); }

  void row(const std::vector<double>& vals) {
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (i) out_ << ',';
      out_ << fmt_double(vals[i]);
    }
    out_ << '\n';
  }

  // Mixed rows (summary tables): already-formatted cells.
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("csv column not found: " + name);
  }

  double num(std::size_t row, std::size_t col) const;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline double parse_double_cell(const std::string& cell, const std::string& context) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  if (end == begin || (end && *end != '\0'))
    throw std::runtime_error("non-numeric csv cell '" + cell + "' in " + context);
  return v;
}

inline double CsvTable::num(std::size_t row, std::size_t col) const {
  return parse_double_cell(rows.at(row).at(col),
                           "row " + std::to_string(row) + " col " + std::to_string(col));
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv: " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
  table.columns = split_csv_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != table.columns.size())
      throw std::runtime_error("ragged csv row at line " + std::to_string(lineno) + " in " + path);
    table.rows.push_back(std::move(cells));
  }
  return table;
}

}  // namespace epiout
