#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace terrawalk {

/// Precondition or invariant violation in an argument or parameter set.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inverse kinematics target outside the annulus the leg can reach.
class ReachabilityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite state entering or leaving the integrator.
class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API used out of order (e.g. stepping a terminated episode).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Replay buffer holds fewer transitions than requested.
class NotReadyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during an optimizer step.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed config, CSV or checkpoint text. `line()` is 1-based, 0 if unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace terrawalk
