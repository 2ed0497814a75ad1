#pragma once

#include <stdexcept>
#include <string>

namespace mppbsde {

// Malformed input: bad scenario data, violated preconditions, inconsistent grids.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// The numerics cannot deliver the requested accuracy (truncation too tight,
// fixed point diverged, state space overflow).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mppbsde
