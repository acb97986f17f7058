#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sixmap::textio {

std::vector<std::string_view> split(std::string_view line, char delim);
std::string_view trim(std::string_view s);

double parse_double(std::string_view field, std::string_view context);
std::int64_t parse_int(std::string_view field, std::string_view context);

// Shortest representation that round-trips the value.
std::string format_double(double v);
// Fixed number of decimals.
std::string format_fixed(double v, int decimals);

// Reads a delimited text file whose first non-comment line is a header.
// Lines starting with '#' are comments.
class DelimitedReader {
 public:
  DelimitedReader(const std::filesystem::path& path, char delim = ',');

  const std::vector<std::string>& header() const { return header_; }
  std::optional<std::size_t> column(std::string_view name) const;
  std::size_t require_column(std::string_view name) const;

  // Returns false at end of file.  Throws on a row with the wrong arity.
  bool next(std::vector<std::string_view>& fields);

  std::size_t line_number() const { return line_no_; }
  std::string where() const;

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  char delim_;
  std::vector<std::string> header_;
  std::string line_;
  std::size_t line_no_ = 0;
};

// Writes to `<path>.tmp` and renames over `path` on commit().  An uncommitted
// writer removes its temporary file.
class AtomicWriter {
 public:
  explicit AtomicWriter(std::filesystem::path path);
  ~AtomicWriter();
  AtomicWriter(const AtomicWriter&) = delete;
  AtomicWriter& operator=(const AtomicWriter&) = delete;

  std::ostream& stream() { return out_; }
  void commit();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace sixmap::textio
