#pragma once

#include <stdexcept>
#include <string>

namespace mmch {

/// Invalid numeric parameter (eps <= 0, grid too coarse, ...).
class ParameterError : public std::invalid_argument {
 public:
  explicit ParameterError(const std::string& what) : std::invalid_argument(what) {}
};

/// Input outside the domain of an operation (non-density input, marginal
/// mismatch, continuity violation, ...).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// An iterative solver failed to meet its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mmch
