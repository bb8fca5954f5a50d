#pragma once

#include <stdexcept>
#include <string>

namespace sscm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A caller broke an API precondition (e.g. backward on a non-scalar).
class ContractError : public Error {
public:
    using Error::Error;
};

// FFT extent that is not a power of two.
class UnsupportedSizeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed file contents (SSCT, checkpoint, PGM).
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Non-finite loss or gradient during optimisation.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace sscm
