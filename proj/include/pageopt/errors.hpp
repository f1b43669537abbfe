#pragma once

#include <stdexcept>
#include <string>

namespace pageopt {

// Invalid or contradictory configuration (bad key, out-of-range value).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A required input file or artifact from a prior stage is absent.
struct MissingInputError : std::runtime_error {
    explicit MissingInputError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed record in an input file; message names the file and line.
struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

// Violated precondition on in-memory data (unknown module, shape mismatch, ...).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pageopt
