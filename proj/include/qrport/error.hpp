#pragma once

#include <stdexcept>
#include <string>

namespace qrport {

/// Broad failure category; the CLI maps these onto exit codes.
enum class ErrorKind { config, data, solver };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

enum class SolverStatus { unbounded, infeasible, not_converged, iteration_limit, insufficient_sample };

class SolverError : public Error {
public:
    SolverError(SolverStatus status, const std::string& what) : Error(ErrorKind::solver, what), status_(status) {}
    SolverStatus status() const noexcept { return status_; }

private:
    SolverStatus status_;
};

inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return 2;
        case ErrorKind::data: return 3;
        case ErrorKind::solver: return 4;
    }
    return 1;
}

}  // namespace qrport
