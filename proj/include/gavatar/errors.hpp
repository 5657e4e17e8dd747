#pragma once

#include <stdexcept>
#include <string>

namespace gavatar {

// Raised for bad user input (files, dimensions, CLI arguments). The CLI maps
// this to exit code 2; anything else is an internal error (exit code 1).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace gavatar
