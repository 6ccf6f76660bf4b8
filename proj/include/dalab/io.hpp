#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dalab {

// Shortest decimal representation that round-trips the double exactly.
// Used for every CSV number so golden-file diffs are stable.
std::string format_double(double value);

// Writes content to a temp file in the target directory then renames it into
// place, so readers never observe a partially written file.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

// Minimal CSV assembly: header once, one row per call, format_double cells.
class CsvBuilder {
 public:
  explicit CsvBuilder(const std::vector<std::string>& header);
  void add_cell(double value);
  void add_cell(const std::string& value);
  void end_row();
  const std::string& str() const { return text_; }

 private:
  std::string text_;
  std::size_t columns_ = 0;
  std::size_t cells_in_row_ = 0;
};

}  // namespace dalab
