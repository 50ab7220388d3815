#pragma once

#include <stdexcept>
#include <string>

namespace mimic {

/// Input outside the domain of an operation (bad shapes, invalid spec files).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The Frenet model is undefined where 1 - kappa*d drops below the guard.
class SingularityError : public std::domain_error {
 public:
  SingularityError(double sigma, double d, double margin);
  double sigma() const { return sigma_; }
  double d() const { return d_; }

 private:
  double sigma_;
  double d_;
};

}  // namespace mimic
