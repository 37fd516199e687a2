#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "terrawalk/error.hpp"

namespace terrawalk {

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Strict decimal parse: the whole (trimmed) field must be a number.
inline double parse_double(std::string_view s, std::size_t line, std::string_view what) {
  s = trim(s);
  std::string_view body = s;
  if (!body.empty() && body.front() == '+') body.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(body.data(), body.data() + body.size(), v);
  if (body.empty() || res.ec != std::errc{} || res.ptr != body.data() + body.size())
    throw ParseError(line, std::string(what) + ": not a number: '" + std::string(s) + "'");
  return v;
}

/// Non-negative integer; scientific notation is accepted if the value is integral.
inline std::uint64_t parse_count(std::string_view s, std::size_t line, std::string_view what) {
  const double v = parse_double(s, line, what);
  if (!(v >= 0.0) || v != std::floor(v) || v > 9007199254740992.0)
    throw ParseError(line, std::string(what) + ": expected a non-negative integer, got '" +
                               std::string(trim(s)) + "'");
  return static_cast<std::uint64_t>(v);
}

/// Full-range unsigned integer, plain decimal digits only.
inline std::uint64_t parse_u64(std::string_view s, std::size_t line, std::string_view what) {
  s = trim(s);
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ParseError(line, std::string(what) + ": expected an unsigned 64-bit integer, got '" +
                               std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  for (;;) {
    const auto pos = s.find(sep);
    out.push_back(s.substr(0, pos));
    if (pos == std::string_view::npos) break;
    s.remove_prefix(pos + 1);
  }
  return out;
}

}  // namespace terrawalk
