#pragma once

#include <stdexcept>
#include <string>

namespace lap {

/// Tensor shapes do not conform for the requested primitive.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside the mathematical domain of an operation (log of a negative, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A caller-side precondition was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A gradient was requested for a node that is not reachable from the loss.
class AbsentGradientError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Reduction over an empty mask or domain.
class EmptyDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Finite-difference verification could not be carried out.
class VerificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File missing, unreadable, or malformed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training stages requested out of order or without their prerequisites.
class StagingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint cannot provide the requested output.
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input too small or too constant for a statistic (correlation of < 3 samples, ...).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace lap
