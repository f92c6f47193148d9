#pragma once

#include <stdexcept>
#include <string>

namespace exposure {

// Bad flags, arity mismatches, and other caller mistakes.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Unreadable files, malformed datasets, architecture mismatches.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite losses or gradients.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace exposure
