#ifndef STGCN_ERROR_HPP
#define STGCN_ERROR_HPP

#include <stdexcept>
#include <string>

namespace stgcn {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor or matrix shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Malformed or out-of-range user input (files, indices, configs).
class InputError : public Error {
public:
    using Error::Error;
};

/// Numerical failure (non-convergence, non-finite values).
class NumericError : public Error {
public:
    using Error::Error;
};

/// API misuse (precondition violated by the caller).
class ContractError : public Error {
public:
    using Error::Error;
};

} // namespace stgcn

#endif
