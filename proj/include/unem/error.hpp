#pragma once
#include <stdexcept>
#include <string>

namespace unem {

// Invalid argument to a numerical kernel (x <= 0 for log_gamma, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// An iterative kernel did not reach its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite value inside a solver or gradient pass. `layer` is -1 when the
// failure is not attributable to a layer (feature map, loss).
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int layer = -1)
      : std::runtime_error(what), layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

// Bad configuration or inconsistent inputs (dimension mismatch, empty
// split, too few samples per class, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace unem

namespace unem {

// A mixture component received zero total weight.
class DegenerateClassError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace unem
