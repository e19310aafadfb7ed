#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace designc {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Syntax error in an expression or document, with a byte offset into the source.
class ParseError : public Error {
public:
  ParseError(const std::string& msg, std::size_t pos)
      : Error(msg + " (at offset " + std::to_string(pos) + ")"), pos_(pos) {}
  std::size_t pos() const { return pos_; }

private:
  std::size_t pos_;
};

// Aggregated diagnostics from loading a document or a whole language bundle.
// Carries every issue found, not just the first.
class LoadError : public Error {
public:
  explicit LoadError(std::vector<std::string> issues)
      : Error(join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const { return issues_; }

private:
  static std::string join(const std::vector<std::string>& issues) {
    std::string out = "load failed with " + std::to_string(issues.size()) +
                      (issues.size() == 1 ? " issue:" : " issues:");
    for (const auto& s : issues) out += "\n  - " + s;
    return out;
  }
  std::vector<std::string> issues_;
};

// Runtime failure while evaluating an expression (unset operand, division by
// zero, type misuse, bad graph query).
class EvalError : public Error {
public:
  using Error::Error;
};

// Violation of a graph- or schema-level contract (unknown node, undeclared
// association, duplicate edge, kind/dimension mismatch, stale match).
class GraphError : public Error {
public:
  using Error::Error;
};

class SolveError : public Error {
public:
  enum class Kind { underdetermined, non_convergence, residual_violation, bad_network };

  SolveError(Kind kind, const std::string& msg, std::vector<std::string> details = {})
      : Error(msg), kind_(kind), details_(std::move(details)) {}
  Kind kind() const { return kind_; }
  // Underdetermined: the unmatched unknowns. Residual violation: offending equation ids.
  const std::vector<std::string>& details() const { return details_; }

private:
  Kind kind_;
  std::vector<std::string> details_;
};

// Process-chain failure: command not found, nonzero exit, timeout, parse or
// write-back error. The design graph is untouched when this is thrown.
class ChainError : public Error {
public:
  using Error::Error;
};

// Failure of a production-system step (required rule unmatched, chain failure,
// predicate error, loop bound or step budget exceeded).
class StepError : public Error {
public:
  using Error::Error;
};

// Collects diagnostics so a loader can report everything wrong at once.
class Diagnostics {
public:
  void add(std::string msg) { items_.push_back(std::move(msg)); }
  bool empty() const { return items_.empty(); }
  const std::vector<std::string>& items() const { return items_; }
  void merge(const Diagnostics& other) {
    items_.insert(items_.end(), other.items_.begin(), other.items_.end());
  }
  // Throws LoadError with all collected issues if any were added.
  void throw_if_any() const {
    if (!items_.empty()) throw LoadError(items_);
  }

private:
  std::vector<std::string> items_;
};

}  // namespace designc
