#pragma once

#include <stdexcept>
#include <string>

namespace catqed {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDimension : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidState : public Error {
 public:
  using Error::Error;
};

/// Fock truncation loses more probability than the caller allows.
class CutoffTooSmall : public Error {
 public:
  CutoffTooSmall(const std::string& what, double deficit)
      : Error(what), deficit_(deficit) {}
  double deficit() const { return deficit_; }

 private:
  double deficit_;
};

/// Parameter-matching condition required by a derivation does not hold.
class ConditionViolation : public Error {
 public:
  using Error::Error;
};

class StepSizeUnderflow : public Error {
 public:
  using Error::Error;
};

class PositivityViolation : public Error {
 public:
  PositivityViolation(const std::string& what, double min_eigenvalue)
      : Error(what), min_eigenvalue_(min_eigenvalue) {}
  double min_eigenvalue() const { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

}  // namespace catqed
