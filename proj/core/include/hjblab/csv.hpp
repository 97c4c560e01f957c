#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace hjblab {

/// Deterministic double formatting ("%.17g"): round-trips exactly and gives
/// byte-identical files across runs on the same platform.
std::string format_double(double v);

/// CSV writer with the run-artifact conventions: '.' decimal separator,
/// '\n' line endings, mandatory header row.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  void write_row(const std::vector<std::string>& cells);
  void write_row(const std::vector<double>& cells);

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t n_columns_;
};

}  // namespace hjblab
