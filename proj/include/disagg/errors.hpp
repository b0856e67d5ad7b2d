#pragma once

#include <stdexcept>
#include <string>

namespace disagg {

// Shape or wiring mismatch between tensors/layers.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration (bad preset, bad parameter value).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (CSV, checkpoint file, ...).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite arithmetic is required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API called out of order (e.g. backward without a forward pass).
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace disagg
