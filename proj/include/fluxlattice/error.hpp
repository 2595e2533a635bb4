#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fluxlattice {

// Base of every error raised by the library. `exit_code` is what the CLI
// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, int exit_code = 1)
        : std::runtime_error(what), exit_code_(exit_code) {}
    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

// Bad input data or a violated invariant (exit code 2).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(what, 2) {}
};

class ConfigError : public ValidationError {
public:
    explicit ConfigError(const std::string& what) : ValidationError("config: " + what) {}
};

class ParseError : public ValidationError {
public:
    ParseError(std::size_t line, const std::string& what)
        : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IntegrityError : public ValidationError {
public:
    explicit IntegrityError(const std::string& what) : ValidationError("integrity: " + what) {}
};

class VersionError : public ValidationError {
public:
    VersionError(int found, int supported)
        : ValidationError("unsupported model format version " + std::to_string(found) +
                          " (this build reads version " + std::to_string(supported) + ")"),
          found_(found) {}
    int found() const noexcept { return found_; }

private:
    int found_;
};

class DegenerateError : public ValidationError {
public:
    explicit DegenerateError(const std::string& what) : ValidationError("degenerate: " + what) {}
};

class InsufficientDataError : public ValidationError {
public:
    explicit InsufficientDataError(const std::string& what)
        : ValidationError("insufficient data: " + what) {}
};

// An agreement index whose value is not defined for the given partitions.
class UndefinedIndexError : public ValidationError {
public:
    explicit UndefinedIndexError(const std::string& what)
        : ValidationError("undefined index: " + what) {}
};

class ConditioningError : public Error {
public:
    explicit ConditioningError(const std::string& what) : Error("conditioning: " + what) {}
};

class TrainingError : public Error {
public:
    TrainingError(int epoch, const std::string& what)
        : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

class RoutingError : public Error {
public:
    explicit RoutingError(const std::string& what) : Error("routing: " + what) {}
};

// A pipeline stage was run before the stage producing its input (exit code 3).
class StagedDependencyError : public Error {
public:
    explicit StagedDependencyError(const std::string& missing)
        : Error("missing upstream artifact: " + missing, 3), missing_(missing) {}
    const std::string& missing() const noexcept { return missing_; }

private:
    std::string missing_;
};

}  // namespace fluxlattice
