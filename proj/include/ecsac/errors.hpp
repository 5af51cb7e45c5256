#pragma once

#include <stdexcept>
#include <string>

namespace ecsac {

// Bad dimensions, unknown names, invalid configuration values. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse: backward on a consumed tape, stepping a finished episode, ...
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

// Sampling from an empty buffer; the training loop is expected to wait.
struct NotReadyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite gradients, losses or TD targets. CLI exit code 3.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace ecsac
