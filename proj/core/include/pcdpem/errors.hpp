#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pcdpem {

/// Invalid argument: sizes, ranges, unknown names.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A generator could not produce an object satisfying its invariants.
class ConstructionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value produced while evaluating a model.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::ptrdiff_t time = -1, std::ptrdiff_t agent = -1)
      : std::runtime_error(what), time_(time), agent_(agent) {}

  std::ptrdiff_t time() const noexcept { return time_; }
  std::ptrdiff_t agent() const noexcept { return agent_; }

 private:
  std::ptrdiff_t time_;
  std::ptrdiff_t agent_;
};

/// Particle weights collapsed (all likelihoods zero, or a zero smoother denominator).
class DegeneracyError : public std::runtime_error {
 public:
  DegeneracyError(const std::string& what, std::ptrdiff_t time, std::ptrdiff_t index = -1)
      : std::runtime_error(what), time_(time), index_(index) {}

  std::ptrdiff_t time() const noexcept { return time_; }
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t time_;
  std::ptrdiff_t index_;
};

/// Gossip protocol precondition violated.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// EM iterate left the admissible region (norm guard tripped).
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int iteration)
      : std::runtime_error(what), iteration_(iteration) {}

  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

}  // namespace pcdpem
