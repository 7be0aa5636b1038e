#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtsc/core.hpp"

namespace mtsc::csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    std::string field = line.substr(start, comma == std::string::npos ? comma : comma - start);
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(std::move(field));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_number(std::string_view field, double& out) {
  // strtod accepts leading whitespace; from_chars does not accept leading '+'.
  size_t begin = field.find_first_not_of(" \t");
  if (begin == std::string_view::npos) return false;
  size_t end = field.find_last_not_of(" \t");
  field = field.substr(begin, end - begin + 1);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  if (field.empty()) return false;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

inline bool parse_integer(std::string_view field, int64_t& out) {
  size_t begin = field.find_first_not_of(" \t");
  if (begin == std::string_view::npos) return false;
  size_t end = field.find_last_not_of(" \t");
  field = field.substr(begin, end - begin + 1);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  if (field.empty()) return false;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

/// Reads a whole CSV file as rows of string fields. Skips blank lines.
inline std::vector<std::vector<std::string>> read_rows(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open file: ", path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    rows.push_back(split_line(line));
  }
  return rows;
}

class Writer {
public:
  explicit Writer(const std::string& path) : out_(path) {
    check(out_.good(), "cannot open file for writing: ", path);
    out_.precision(9);
  }

  template <typename... Fields>
  void row(Fields&&... fields) {
    bool first = true;
    ((out_ << (first ? "" : ","), first = false, out_ << fields), ...);
    out_ << "\n";
  }

  void flush() { out_.flush(); }

private:
  std::ofstream out_;
};

}  // namespace mtsc::csv
