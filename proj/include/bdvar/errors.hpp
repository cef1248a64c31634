#pragma once

#include <stdexcept>
#include <string>

namespace bdvar {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto exit codes, so keep the hierarchy flat.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid grids, misaligned knots, malformed experiment descriptors.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A feedback rule or functional produced a non-finite value.
class EvaluationError : public Error {
public:
    using Error::Error;
};

// Monte Carlo estimation failed (every path rejected, overflow, weight degeneracy).
class EstimationError : public Error {
public:
    using Error::Error;
};

// Quadrature or root finding did not reach the requested accuracy.
class NumericError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of an operation (e.g. zero functional).
class DomainError : public Error {
public:
    using Error::Error;
};

}  // namespace bdvar
