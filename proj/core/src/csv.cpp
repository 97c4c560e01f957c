#include "hjblab/csv.hpp"

#include <cstdio>
#include <stdexcept>

namespace hjblab {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : path_(path), n_columns_(header.size()) {
  if (header.empty()) throw std::invalid_argument("CsvWriter: header row is mandatory");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary);  // binary: '\n' endings on every platform
  if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path.string());
  write_row(header);
}

void CsvWriter::write_row(const std::vector<std::string>& cells) {
  if (cells.size() != n_columns_)
    throw std::invalid_argument("CsvWriter: row width mismatch in " + path_.string());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

void CsvWriter::write_row(const std::vector<double>& cells) {
  std::vector<std::string> s;
  s.reserve(cells.size());
  for (double v : cells) s.push_back(format_double(v));
  write_row(s);
}

}  // namespace hjblab
