#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <string>

namespace fishmech {

/// A real value that may be +infinity, carried as an explicit flag so that
/// infinite privacy losses and unbounded bounds never leak NaNs into
/// arithmetic or CSV output.
struct ExtendedReal {
  double value = 0.0;
  bool infinite = false;

  static ExtendedReal finite(double v) { return {v, false}; }
  static ExtendedReal inf() { return {0.0, true}; }

  bool is_finite() const { return !infinite; }

  /// Value as a double, with +inf for the infinite flag.
  double as_double() const {
    return infinite ? std::numeric_limits<double>::infinity() : value;
  }

  friend bool operator<(const ExtendedReal& a, const ExtendedReal& b) {
    if (a.infinite) return false;
    if (b.infinite) return true;
    return a.value < b.value;
  }
};

/// Shortest round-trippable decimal form of a double ("inf" for the flag).
inline std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string format_real(const ExtendedReal& v) {
  return v.infinite ? "inf" : format_real(v.value);
}

/// Standard normal CDF.
inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

}  // namespace fishmech
