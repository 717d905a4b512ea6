#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tclt {

/// Invalid input or configuration (bad sizes, non-finite values, schema errors).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf, negative density beyond tolerance or any other loss of a numerical invariant.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double model_time)
      : std::runtime_error(what + " (t = " + std::to_string(model_time) + ")"),
        time_(model_time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Singular kernel evaluated at coincident points.
class SingularityError : public std::domain_error {
 public:
  explicit SingularityError(const std::string& what, std::ptrdiff_t i = -1, std::ptrdiff_t j = -1)
      : std::domain_error(what), i_(i), j_(j) {}
  std::ptrdiff_t first() const noexcept { return i_; }
  std::ptrdiff_t second() const noexcept { return j_; }

 private:
  std::ptrdiff_t i_;
  std::ptrdiff_t j_;
};

class UnsupportedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A replica of an ensemble failed; carries the replica id.
class ReplicaError : public std::runtime_error {
 public:
  ReplicaError(std::size_t replica_id, const std::string& what)
      : std::runtime_error("replica " + std::to_string(replica_id) + ": " + what),
        replica_id_(replica_id) {}
  std::size_t replica_id() const noexcept { return replica_id_; }

 private:
  std::size_t replica_id_;
};

}  // namespace tclt
