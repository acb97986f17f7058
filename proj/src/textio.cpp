#include "sixmap/textio.hpp"

#include <charconv>
#include <sstream>

#include <fmt/format.h>

#include "sixmap/common.hpp"

namespace sixmap::textio {

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view field, std::string_view context) {
  field = trim(field);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    fail(ErrorCode::kMalformedInput,
         fmt::format("{}: cannot parse '{}' as a number", context, field));
  }
  return v;
}

std::int64_t parse_int(std::string_view field, std::string_view context) {
  field = trim(field);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    fail(ErrorCode::kMalformedInput,
         fmt::format("{}: cannot parse '{}' as an integer", context, field));
  }
  return v;
}

std::string format_double(double v) { return fmt::format("{}", v); }

std::string format_fixed(double v, int decimals) {
  std::string s = fmt::format("{:.{}f}", v, decimals);
  // Avoid "-0.000" so that rotated and unrotated zeros print identically.
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

DelimitedReader::DelimitedReader(const std::filesystem::path& path, char delim)
    : path_(path), in_(path), delim_(delim) {
  if (!in_) fail(ErrorCode::kMissingInput, fmt::format("cannot open {}", path.string()));
  while (std::getline(in_, line_)) {
    ++line_no_;
    std::string_view t = trim(line_);
    if (t.empty() || t.front() == '#') continue;
    for (auto f : split(t, delim_)) header_.emplace_back(trim(f));
    return;
  }
  fail(ErrorCode::kMalformedInput, fmt::format("{}: missing header", path.string()));
}

std::optional<std::size_t> DelimitedReader::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t DelimitedReader::require_column(std::string_view name) const {
  auto c = column(name);
  if (!c) {
    fail(ErrorCode::kMalformedInput,
         fmt::format("{}: missing column '{}'", path_.string(), name));
  }
  return *c;
}

bool DelimitedReader::next(std::vector<std::string_view>& fields) {
  while (std::getline(in_, line_)) {
    ++line_no_;
    std::string_view t = trim(line_);
    if (t.empty() || t.front() == '#') continue;
    fields = split(t, delim_);
    if (fields.size() != header_.size()) {
      fail(ErrorCode::kMalformedInput,
           fmt::format("{}: expected {} fields, found {}", where(), header_.size(),
                       fields.size()));
    }
    return true;
  }
  return false;
}

std::string DelimitedReader::where() const {
  return fmt::format("{}:{}", path_.string(), line_no_);
}

AtomicWriter::AtomicWriter(std::filesystem::path path)
    : path_(std::move(path)), tmp_(path_.string() + ".tmp") {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) fail(ErrorCode::kMissingInput, fmt::format("cannot write {}", tmp_.string()));
}

AtomicWriter::~AtomicWriter() {
  if (!committed_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }
}

void AtomicWriter::commit() {
  out_.flush();
  if (!out_) fail(ErrorCode::kMissingInput, fmt::format("write failed: {}", tmp_.string()));
  out_.close();
  std::filesystem::rename(tmp_, path_);
  committed_ = true;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  AtomicWriter w(path);
  w.stream() << content;
  w.commit();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingInput, fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kMissingInput, fmt::format("cannot open {}", path.string()));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty()) lines.emplace_back(t);
  }
  return lines;
}

}  // namespace sixmap::textio
