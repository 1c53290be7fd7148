#pragma once

#include <stdexcept>
#include <string>

namespace acekit {

// Invalid inputs, schema violations, contract mismatches. The CLI maps
// these to exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric failures during fitting or estimation. The CLI maps these to
// exit code 3.
class EstimationError : public std::runtime_error {
public:
    explicit EstimationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace acekit
