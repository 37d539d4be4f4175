#pragma once

#include <stdexcept>
#include <string>

namespace tdvsm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed case/config/model document or a violated model invariant.
class CaseError : public Error {
public:
    using Error::Error;
};

/// Removing an element would split the transmission graph.
class IslandingError : public Error {
public:
    using Error::Error;
};

/// Caller violated an operation precondition (sizes, sample counts, ranges).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Singular or non-finite linear algebra, typically at voltage collapse.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// An optimization problem has no feasible point.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

}  // namespace tdvsm
