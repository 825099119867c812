#ifndef AULLMXX_CORE_ERROR_HPP
#define AULLMXX_CORE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace aullmxx {

// Error kinds map onto CLI exit codes: ConfigError -> 2, everything else -> 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Malformed or inconsistent stored data (byte-length mismatch, bad schema version).
struct DataError : Error {
    using Error::Error;
};

struct LookupError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

// Non-finite or otherwise invalid numeric input.
struct InputError : Error {
    using Error::Error;
};

// Operation called in the wrong train/eval mode.
struct StateError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace aullmxx

#endif  // AULLMXX_CORE_ERROR_HPP
