#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <system_error>

#include "unicon/error.hpp"

namespace unicon {

// Shortest representation that parses back to the identical f64.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ValidationError("cannot format double");
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValidationError("not a number: '" + std::string(s) + "'");
  return v;
}

inline std::int64_t parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValidationError("not an integer: '" + std::string(s) + "'");
  return v;
}

// Millisecond timestamps are written as seconds with exactly three decimals.
inline std::string format_ms(std::int64_t ms) {
  const bool neg = ms < 0;
  const std::int64_t a = neg ? -ms : ms;
  std::string frac = std::to_string(a % 1000);
  frac.insert(0, 3 - frac.size(), '0');
  return (neg ? "-" : "") + std::to_string(a / 1000) + "." + frac;
}

inline std::int64_t parse_ms(std::string_view s) {
  const auto dot = s.find('.');
  if (dot == std::string_view::npos) return parse_int(s) * 1000;
  const bool neg = !s.empty() && s.front() == '-';
  std::string_view whole = s.substr(0, dot);
  std::string frac(s.substr(dot + 1));
  if (frac.size() > 3) {
    // Sub-millisecond digits: round to nearest.
    return static_cast<std::int64_t>(std::llround(parse_double(s) * 1000.0));
  }
  frac.append(3 - frac.size(), '0');
  const std::int64_t w = (whole.empty() || whole == "-") ? 0 : parse_int(whole);
  const std::int64_t f = parse_int(frac);
  const std::int64_t aw = w < 0 ? -w : w;
  const std::int64_t total = aw * 1000 + f;
  return neg ? -total : total;
}

}  // namespace unicon
