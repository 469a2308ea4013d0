#pragma once

#include <stdexcept>
#include <string>

namespace actalign {

// Shape/dimension disagreements. Message names both shapes.
struct dim_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Violated value preconditions (degenerate vectors, bad indices, empty input).
struct value_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite numbers where finite ones are required.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration (out-of-range knobs, infeasible sizes).
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// File-level failures: missing files, bad magic, truncated or schema-invalid data.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Work refused because it would exceed a hard size guard.
struct resource_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace actalign
