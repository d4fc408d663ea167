#pragma once

#include <stdexcept>
#include <string>

namespace cone_breaker {

/// Input outside the admissible parameter range.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A numerical self-check failed (e.g. a ratio that must be constant is not).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative procedure hit its iteration/size budget before meeting its
/// tolerance. Carries the best value reached so callers can still report it.
class NoConvergence : public NumericalError {
 public:
  NoConvergence(const std::string& what, double partial_value, double err_est)
      : NumericalError(what), partial_value_(partial_value), err_est_(err_est) {}

  double partial_value() const noexcept { return partial_value_; }
  double err_est() const noexcept { return err_est_; }

 private:
  double partial_value_;
  double err_est_;
};

}  // namespace cone_breaker
