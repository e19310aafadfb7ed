#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <variant>

#include "designc/errors.hpp"

namespace designc {

enum class ValKind { number, string, boolean };

inline const char* val_kind_name(ValKind k) {
  switch (k) {
    case ValKind::number: return "number";
    case ValKind::string: return "string";
    case ValKind::boolean: return "boolean";
  }
  return "?";
}

// A runtime attribute value. Default-constructed means "unset".
class Value {
public:
  Value() = default;
  Value(double d) : v_(d) {}
  Value(int d) : v_(static_cast<double>(d)) {}
  Value(std::string s) : v_(std::move(s)) {}
  Value(const char* s) : v_(std::string(s)) {}
  Value(bool b) : v_(b) {}

  bool is_set() const { return !std::holds_alternative<std::monostate>(v_); }
  bool is_number() const { return std::holds_alternative<double>(v_); }
  bool is_string() const { return std::holds_alternative<std::string>(v_); }
  bool is_bool() const { return std::holds_alternative<bool>(v_); }

  std::optional<ValKind> kind() const {
    if (is_number()) return ValKind::number;
    if (is_string()) return ValKind::string;
    if (is_bool()) return ValKind::boolean;
    return std::nullopt;
  }

  double number() const {
    if (!is_number()) throw Error("value is not a number");
    return std::get<double>(v_);
  }
  const std::string& str() const {
    if (!is_string()) throw Error("value is not a string");
    return std::get<std::string>(v_);
  }
  bool boolean() const {
    if (!is_bool()) throw Error("value is not a boolean");
    return std::get<bool>(v_);
  }

  bool operator==(const Value& o) const { return v_ == o.v_; }
  bool operator!=(const Value& o) const { return v_ != o.v_; }

  std::string repr() const;

private:
  std::variant<std::monostate, double, std::string, bool> v_;
};

// Canonical number formatting: 17 significant digits, round-trip exact.
inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string Value::repr() const {
  if (!is_set()) return "<unset>";
  if (is_number()) return format_number(number());
  if (is_bool()) return boolean() ? "true" : "false";
  return "'" + str() + "'";
}

}  // namespace designc
