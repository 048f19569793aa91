#pragma once

// Exact text encoding of doubles as C99 hexadecimal floating literals
// ("0x1.8p+1"). Decimal-free, so parse(format(x)) == x bit for bit.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>

namespace proxylab {

inline std::string format_hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

// Accepts hex or decimal literals; the whole token must be consumed and the
// value must be finite.
inline std::optional<double> parse_double(std::string_view token) {
  if (token.empty() || token.size() > 128) return std::nullopt;
  const std::string s(token);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  // Overflow shows up as inf; subnormal results are exact and accepted.
  if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// Shortest decimal text that reads back exactly; used for CSV artefacts.
inline std::string format_decimal(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace proxylab
