#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mimic {

/// Shortest round-trip decimal representation; stable across runs.
std::string format_double(double value);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

/// Numeric CSV with a single header line.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

/// Accumulates rows and writes them in one go.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  void add_row(const std::vector<double>& values);
  std::string str() const { return out_; }
  void write(const std::filesystem::path& path) const { write_text_file(path, out_); }

 private:
  std::size_t width_;
  std::string out_;
};

}  // namespace mimic
