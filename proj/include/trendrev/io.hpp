#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "trendrev/common.hpp"

namespace trendrev::io {

/// Shortest-safe text for a double: 17 significant digits, round-trips exactly.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw FormatError("not a number: '" + std::string(s) + "'", line);
  return v;
}

inline long long parse_int(std::string_view s, std::size_t line) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw FormatError("not an integer: '" + std::string(s) + "'", line);
  return v;
}

/// Parses an ISO date "YYYY-MM-DD".
inline std::chrono::sys_days parse_date(std::string_view s, std::size_t line = 0) {
  using namespace std::chrono;
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw FormatError("bad ISO date '" + std::string(s) + "'", line);
  const auto y = static_cast<int>(parse_int(s.substr(0, 4), line));
  const auto m = static_cast<unsigned>(parse_int(s.substr(5, 2), line));
  const auto d = static_cast<unsigned>(parse_int(s.substr(8, 2), line));
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw FormatError("invalid calendar date '" + std::string(s) + "'", line);
  return sys_days{ymd};
}

inline std::string format_date(std::chrono::sys_days d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes via a temporary sibling and renames, so failures leave no partial output.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

/// Calls fn(line_number, line) for every non-empty line.
template <class Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t lineno = 0, start = 0;
  while (start <= text.size()) {
    auto pos = text.find('\n', start);
    if (pos == std::string_view::npos) pos = text.size();
    ++lineno;
    auto line = trim(text.substr(start, pos - start));
    if (!line.empty()) fn(lineno, line);
    start = pos + 1;
  }
}

}  // namespace trendrev::io
