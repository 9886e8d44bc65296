// errors.hpp -- error hierarchy shared by all modules.
//
// ValidationError: malformed models, topologies or input files.
// ContractError:   an operation precondition was violated by the caller.
// ProtocolError:   inconsistent node tables / reports in the distributed engine.
// NumericError:    solver failures, non-convergence, residual checks.

#pragma once

#include <stdexcept>
#include <string>

namespace lmroute {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace lmroute
