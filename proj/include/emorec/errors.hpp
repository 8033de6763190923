#pragma once

#include <stdexcept>
#include <string>

namespace emorec {

// Config, manifest or shape precondition violations. CLI maps these to exit 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, divergence, broken graphs. CLI maps these to exit 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace emorec
