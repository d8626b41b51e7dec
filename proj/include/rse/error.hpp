#pragma once

#include <stdexcept>
#include <string>

namespace rse {

/// A precondition of a public operation was violated by the caller.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced non-finite values or a degenerate search distribution.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace rse
