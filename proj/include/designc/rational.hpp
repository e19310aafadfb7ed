#pragma once

#include <boost/rational.hpp>
#include <charconv>
#include <cstdlib>
#include <optional>
#include <string>

namespace designc {

// Exact rational arithmetic for dimension exponents and nullspace elimination.
using Rat = boost::rational<long long>;

inline std::string rat_str(const Rat& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

inline double rat_double(const Rat& r) { return boost::rational_cast<double>(r); }

// Accepts "2", "-3", "1/2", "-3/4". Rejects decimals, whitespace, empty parts.
inline std::optional<Rat> parse_rational(const std::string& s) {
  auto parse_ll = [](const std::string& t) -> std::optional<long long> {
    long long v = 0;
    const char* b = t.data();
    const char* e = t.data() + t.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) return std::nullopt;
    return v;
  };
  auto slash = s.find('/');
  if (slash == std::string::npos) {
    auto n = parse_ll(s);
    if (!n) return std::nullopt;
    return Rat(*n);
  }
  auto n = parse_ll(s.substr(0, slash));
  auto d = parse_ll(s.substr(slash + 1));
  if (!n || !d || *d == 0) return std::nullopt;
  return Rat(*n, *d);
}

inline Rat rat_pow(const Rat& base, long long e) {
  if (e < 0) return Rat(1) / rat_pow(base, -e);
  Rat acc(1);
  for (long long i = 0; i < e; ++i) acc *= base;
  return acc;
}

// Largest double exactly convertible back; used when folding literals to rationals.
inline std::optional<long long> exact_integer(double v) {
  if (v != v) return std::nullopt;
  if (v < -9007199254740992.0 || v > 9007199254740992.0) return std::nullopt;
  long long n = static_cast<long long>(v);
  if (static_cast<double>(n) != v) return std::nullopt;
  return n;
}

}  // namespace designc
