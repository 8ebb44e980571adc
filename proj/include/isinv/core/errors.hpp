#pragma once

#include <stdexcept>
#include <string>

namespace isinv {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, failed decompositions, divergence.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (layer out of range, bad probability, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed or corrupted on-disk / on-wire data.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace isinv
