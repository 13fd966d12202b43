#pragma once

#include <stdexcept>
#include <string>

namespace koala {

// Bad data handed to an operation: wrong shapes, out-of-range ids,
// malformed files. CLI maps this to exit code 2.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// An internal contract was broken: role mismatch, frozen-parameter
// update, ragged token sets. CLI maps this to exit code 1.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run configuration (unknown key, incompatible dims).
struct ConfigError : InputError {
    explicit ConfigError(const std::string& msg) : InputError(msg) {}
};

// A primitive produced a non-finite value. Message names the primitive.
struct NumericError : ContractError {
    explicit NumericError(const std::string& msg) : ContractError(msg) {}
};

} // namespace koala
