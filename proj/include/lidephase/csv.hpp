#ifndef LIDEPHASE_CSV_HPP
#define LIDEPHASE_CSV_HPP

// Locale-independent number formatting, comma-separated tables with '#'
// comments, and atomic file replacement.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <unistd.h>

#include "lidephase/errors.hpp"

namespace lidephase {

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

/// Parses a whole field as a double; "nan"/"inf" are accepted.
inline std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_integer(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  long long v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary sibling and renames it over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw MissingFileError(tmp.string(), "cannot create file");
    out << content;
    out.flush();
    if (!out) throw MissingFileError(tmp.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw MissingFileError(path.string(), "cannot replace file");
  }
}

class CsvTable {
 public:
  static CsvTable parse(const std::string& text, const std::string& origin) {
    CsvTable t;
    t.origin_ = origin;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, raw)) {
      ++line_no;
      const auto line = trim(raw);
      if (line.empty() || line.front() == '#') continue;
      auto fields = split(line, ',');
      if (!have_header) {
        for (const auto& f : fields) {
          if (f.empty()) throw ParseError(origin, line_no, "empty column name in header");
          if (std::count(fields.begin(), fields.end(), f) > 1) {
            throw ParseError(origin, line_no, "duplicate column '" + f + "'");
          }
        }
        t.header_ = std::move(fields);
        t.header_line_ = line_no;
        have_header = true;
        continue;
      }
      if (fields.size() != t.header_.size()) {
        throw ParseError(origin, line_no,
                         "expected " + std::to_string(t.header_.size()) + " fields, found " +
                             std::to_string(fields.size()));
      }
      t.rows_.push_back(std::move(fields));
      t.lines_.push_back(line_no);
    }
    if (!have_header) throw ParseError(origin, 0, "missing header row");
    return t;
  }

  static CsvTable read(const std::filesystem::path& path) {
    return parse(read_text_file(path), path.string());
  }

  std::size_t size() const { return rows_.size(); }
  const std::vector<std::string>& header() const { return header_; }
  const std::string& origin() const { return origin_; }
  std::size_t line(std::size_t row) const { return lines_.at(row); }

  std::optional<std::size_t> find_column(const std::string& name) const {
    const auto it = std::find(header_.begin(), header_.end(), name);
    if (it == header_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header_.begin());
  }

  std::size_t column(const std::string& name) const {
    if (auto c = find_column(name)) return *c;
    throw ParseError(origin_, header_line_, "missing required column '" + name + "'");
  }

  const std::string& text(std::size_t row, std::size_t col) const { return rows_.at(row).at(col); }

  double number(std::size_t row, std::size_t col) const {
    const auto v = parse_double(text(row, col));
    if (!v) {
      throw ParseError(origin_, lines_.at(row),
                       "column '" + header_.at(col) + "': not a number: '" + text(row, col) + "'");
    }
    return *v;
  }

 private:
  std::string origin_;
  std::vector<std::string> header_;
  std::size_t header_line_ = 0;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> lines_;
};

/// Builds CSV text row by row; doubles use format_double.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  CsvWriter& comment(const std::string& text) {
    out_ += "# " + text + "\n";
    return *this;
  }

  CsvWriter& row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ += ',';
      out_ += fields[i];
    }
    out_ += '\n';
    return *this;
  }

  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

}  // namespace lidephase

#endif  // LIDEPHASE_CSV_HPP
