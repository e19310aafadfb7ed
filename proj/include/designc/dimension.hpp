#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "designc/errors.hpp"
#include "designc/rational.hpp"

namespace designc {

// SI base dimensions, fixed axis order: mass, length, time, current,
// temperature, amount of substance, luminous intensity.
inline constexpr std::size_t kBaseDimensions = 7;
inline constexpr std::array<const char*, kBaseDimensions> kDimensionSymbols = {
    "M", "L", "T", "I", "Th", "N", "J"};
inline constexpr std::array<const char*, kBaseDimensions> kBaseUnitSymbols = {
    "kg", "m", "s", "A", "K", "mol", "cd"};

// A dimensional signature: one rational exponent per SI base dimension.
// The zero vector is dimensionless.
class Dimension {
public:
  Dimension() = default;

  static Dimension base(std::size_t axis, Rat exponent = Rat(1)) {
    Dimension d;
    d.exp_[axis] = exponent;
    return d;
  }

  const Rat& operator[](std::size_t i) const { return exp_[i]; }
  Rat& operator[](std::size_t i) { return exp_[i]; }

  bool dimensionless() const {
    return std::all_of(exp_.begin(), exp_.end(), [](const Rat& r) { return r == Rat(0); });
  }

  Dimension operator*(const Dimension& o) const {
    Dimension d;
    for (std::size_t i = 0; i < kBaseDimensions; ++i) d.exp_[i] = exp_[i] + o.exp_[i];
    return d;
  }
  Dimension operator/(const Dimension& o) const {
    Dimension d;
    for (std::size_t i = 0; i < kBaseDimensions; ++i) d.exp_[i] = exp_[i] - o.exp_[i];
    return d;
  }
  Dimension pow(const Rat& e) const {
    Dimension d;
    for (std::size_t i = 0; i < kBaseDimensions; ++i) d.exp_[i] = exp_[i] * e;
    return d;
  }

  bool operator==(const Dimension& o) const { return exp_ == o.exp_; }
  bool operator!=(const Dimension& o) const { return !(*this == o); }

  // "M*L^2*T^-3" style; "1" when dimensionless.
  std::string str() const {
    std::string out;
    for (std::size_t i = 0; i < kBaseDimensions; ++i) {
      if (exp_[i] == Rat(0)) continue;
      if (!out.empty()) out += "*";
      out += kDimensionSymbols[i];
      if (exp_[i] != Rat(1)) out += "^" + rat_str(exp_[i]);
    }
    return out.empty() ? "1" : out;
  }

private:
  std::array<Rat, kBaseDimensions> exp_{};
};

// SI base unit symbol -> axis, for unit tags on numeric literals.
inline std::optional<std::size_t> base_unit_axis(const std::string& name) {
  for (std::size_t i = 0; i < kBaseDimensions; ++i)
    if (name == kBaseUnitSymbols[i]) return i;
  return std::nullopt;
}

// Dimension symbol (M, L, T, I, Th, N, J) -> axis, for vocabulary documents.
inline std::optional<std::size_t> dimension_symbol_axis(const std::string& name) {
  for (std::size_t i = 0; i < kBaseDimensions; ++i)
    if (name == kDimensionSymbols[i]) return i;
  return std::nullopt;
}

// A dimensionless product of powers of the input variables. Exponents are
// normalized: integers with gcd 1 and a positive first nonzero entry.
struct PiGroup {
  // One entry per input variable, in input order; zero exponents included.
  std::vector<std::pair<std::string, long long>> exponents;

  // Human-readable product, e.g. "T^2*g/L".
  std::string product() const {
    std::string num, den;
    for (const auto& [name, e] : exponents) {
      if (e == 0) continue;
      std::string& side = e > 0 ? num : den;
      if (!side.empty()) side += "*";
      side += name;
      long long a = e > 0 ? e : -e;
      if (a != 1) side += "^" + std::to_string(a);
    }
    if (num.empty()) num = "1";
    if (den.empty()) return num;
    if (den.find('*') != std::string::npos) return num + "/(" + den + ")";
    return num + "/" + den;
  }
};

struct PiReport {
  std::vector<std::pair<std::string, Dimension>> variables;
  std::size_t rank = 0;
  std::vector<PiGroup> groups;
};

// Nullspace basis of the dimension matrix by Gauss-Jordan elimination over
// exact rationals. Group count equals n - rank. Deterministic: variables keep
// input order and free columns are pivoted in input order.
inline PiReport pi_report(const std::vector<std::pair<std::string, Dimension>>& variables) {
  if (variables.empty()) throw Error("pi groups: at least one variable required");
  {
    std::set<std::string> seen;
    for (const auto& [name, dim] : variables)
      if (!seen.insert(name).second) throw Error("pi groups: duplicate variable name '" + name + "'");
  }

  const std::size_t n = variables.size();
  // rows: base dimensions, columns: variables
  std::vector<std::vector<Rat>> m(kBaseDimensions, std::vector<Rat>(n, Rat(0)));
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t r = 0; r < kBaseDimensions; ++r) m[r][c] = variables[c].second[r];

  std::vector<std::pair<std::size_t, std::size_t>> pivots;  // (row, col)
  std::size_t rank = 0;
  for (std::size_t col = 0; col < n && rank < kBaseDimensions; ++col) {
    std::size_t pr = rank;
    while (pr < kBaseDimensions && m[pr][col] == Rat(0)) ++pr;
    if (pr == kBaseDimensions) continue;  // free column
    std::swap(m[rank], m[pr]);
    Rat piv = m[rank][col];
    for (std::size_t c = col; c < n; ++c) m[rank][c] /= piv;
    for (std::size_t r = 0; r < kBaseDimensions; ++r) {
      if (r == rank || m[r][col] == Rat(0)) continue;
      Rat f = m[r][col];
      for (std::size_t c = col; c < n; ++c) m[r][c] -= f * m[rank][c];
    }
    pivots.emplace_back(rank, col);
    ++rank;
  }

  std::vector<bool> is_pivot(n, false);
  for (auto [r, c] : pivots) is_pivot[c] = true;

  PiReport report;
  report.variables = variables;
  report.rank = rank;
  for (std::size_t free_col = 0; free_col < n; ++free_col) {
    if (is_pivot[free_col]) continue;
    std::vector<Rat> x(n, Rat(0));
    x[free_col] = Rat(1);
    for (auto [r, c] : pivots) x[c] = -m[r][free_col];

    // integer normalization: clear denominators, divide by gcd, fix sign
    long long lcm = 1;
    for (const auto& v : x) lcm = std::lcm(lcm, v.denominator());
    std::vector<long long> ix(n);
    for (std::size_t i = 0; i < n; ++i) ix[i] = x[i].numerator() * (lcm / x[i].denominator());
    long long g = 0;
    for (long long v : ix) g = std::gcd(g, v < 0 ? -v : v);
    if (g > 1)
      for (auto& v : ix) v /= g;
    for (long long v : ix) {
      if (v == 0) continue;
      if (v < 0)
        for (auto& w : ix) w = -w;
      break;
    }

    PiGroup group;
    for (std::size_t i = 0; i < n; ++i) group.exponents.emplace_back(variables[i].first, ix[i]);
    report.groups.push_back(std::move(group));
  }
  return report;
}

inline std::vector<PiGroup> pi_groups(const std::vector<std::pair<std::string, Dimension>>& variables) {
  return pi_report(variables).groups;
}

// Orders subsystems by ascending free-parameter count: the subsystem with the
// fewest degrees of freedom is fixed first. Ties break lexicographically.
inline std::vector<std::string> design_sequence(
    const std::vector<std::pair<std::string, long long>>& subsystems) {
  std::set<std::string> seen;
  for (const auto& [name, count] : subsystems) {
    if (count < 0) throw Error("design sequence: negative count for '" + name + "'");
    if (!seen.insert(name).second) throw Error("design sequence: duplicate subsystem name '" + name + "'");
  }
  std::vector<std::pair<std::string, long long>> sorted = subsystems;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  std::vector<std::string> names;
  names.reserve(sorted.size());
  for (auto& [name, count] : sorted) names.push_back(name);
  return names;
}

}  // namespace designc
