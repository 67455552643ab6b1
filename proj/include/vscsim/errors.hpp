#pragma once

#include <stdexcept>
#include <string>

namespace vscsim {

/// Machine-readable failure categories. The numeric values double as CLI
/// exit codes where one is defined.
enum class ErrorCategory {
    config = 2,
    numerical_divergence = 3,
    io = 4,
    singular_network = 5,
    unknown_target = 6,
    power_flow_diverged = 7,
    init_failure = 8,
    empty_window = 9,
};

const char* category_name(ErrorCategory c);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category)
    {
    }
    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

class NumericalDivergence : public Error {
public:
    NumericalDivergence(const std::string& what, double t, double dt)
        : Error(ErrorCategory::numerical_divergence, what), t_(t), dt_(dt)
    {
    }
    double time() const { return t_; }
    double dt() const { return dt_; }

private:
    double t_;
    double dt_;
};

class SingularNetwork : public Error {
public:
    explicit SingularNetwork(const std::string& what) : Error(ErrorCategory::singular_network, what) {}
};

class UnknownTarget : public Error {
public:
    explicit UnknownTarget(const std::string& what) : Error(ErrorCategory::unknown_target, what) {}
};

class PowerFlowDiverged : public Error {
public:
    explicit PowerFlowDiverged(const std::string& what) : Error(ErrorCategory::power_flow_diverged, what) {}
};

class InitFailure : public Error {
public:
    explicit InitFailure(const std::string& what) : Error(ErrorCategory::init_failure, what) {}
};

class EmptyWindow : public Error {
public:
    explicit EmptyWindow(const std::string& what) : Error(ErrorCategory::empty_window, what) {}
};

} // namespace vscsim
