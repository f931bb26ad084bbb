#pragma once

#include <stdexcept>
#include <string>

namespace copreg {

/// Argument outside the mathematical domain of a density, link or distribution.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Shapes, labels or schemas that do not fit together.
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value or failed to converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs f and rethrows any library error as the same type with
/// "<context>: " prepended to the message.
template <class F>
auto with_context(const std::string& context, F&& f) {
  try {
    return f();
  } catch (const DomainError& e) {
    throw DomainError(context + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(context + ": " + e.what());
  } catch (const StructuralError& e) {
    throw StructuralError(context + ": " + e.what());
  }
}

}  // namespace copreg
