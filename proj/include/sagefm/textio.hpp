#pragma once

// Small text helpers shared by the file-format readers and CSV writers.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace sagefm {

/// Reads every line (without terminators, CR stripped). Throws LoadError.
std::vector<std::string> read_lines(const std::filesystem::path& path);

std::vector<std::string> split(std::string_view s, char sep);

/// Strict parsers; throw CorruptData on trailing garbage or overflow.
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

/// Shortest representation that parses back to the same double.
std::string format_double(double v);

/// Minimal CSV emitter. Fields are written verbatim; numeric fields use
/// format_double so outputs are byte-stable across runs.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::initializer_list<std::string_view> header);
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  CsvWriter& field(std::string_view s);
  CsvWriter& field(double v);
  CsvWriter& field(long long v);
  CsvWriter& field(std::size_t v) { return field(static_cast<long long>(v)); }
  CsvWriter& field(int v) { return field(static_cast<long long>(v)); }
  void end_row();

 private:
  void write_header(const std::vector<std::string>& header);

  std::ofstream out_;
  bool row_started_ = false;
};

}  // namespace sagefm
