#pragma once

#include <stdexcept>
#include <string>

namespace lune {

// Process exit codes used by the CLI. Every library error maps onto one of them.
enum class ExitCode : int {
    kOk = 0,
    kUsage = 2,
    kInvariant = 3,
    kIo = 4,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, ExitCode code = ExitCode::kInvariant)
        : std::runtime_error(what), code_(code) {}

    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

// Shape or dimension mismatch between operands.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error(what, ExitCode::kInvariant) {}
};

// Violated precondition of an operation (non-scalar loss, empty mask, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error(what, ExitCode::kInvariant) {}
};

// Object used in the wrong lifecycle state (double merge, ...).
class StateError : public Error {
public:
    explicit StateError(const std::string& what) : Error(what, ExitCode::kInvariant) {}
};

// Bad configuration value, unknown key, invalid plan.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what, ExitCode::kUsage) {}
};

// Filesystem or serialization failure.
class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what, ExitCode::kIo) {}
};

// Training-time invariant failure: NaN loss, recall gate miss, backbone drift.
class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& what) : Error(what, ExitCode::kInvariant) {}
};

}  // namespace lune
