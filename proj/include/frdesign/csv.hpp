#pragma once

#include <cstdio>
#include <string>

namespace frdesign {

/// Shortest-safe round-trip text for a double (17 significant digits).
inline std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace frdesign
