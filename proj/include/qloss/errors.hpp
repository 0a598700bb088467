#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qloss {

/// Root of every error the toolkit throws. `origin()` names the module
/// that raised it so pipeline reports can attribute failures.
class Error : public std::runtime_error {
public:
    Error(std::string origin, const std::string& what)
        : std::runtime_error(what), origin_(std::move(origin)) {}
    const std::string& origin() const noexcept { return origin_; }

private:
    std::string origin_;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Linear solve produced a residual above tolerance.
class NumericalFailure : public Error {
public:
    NumericalFailure(std::string origin, const std::string& what, double residual)
        : Error(std::move(origin), what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(std::string origin, const std::string& what, double previous, double last)
        : Error(std::move(origin), what), previous_(previous), last_(last) {}
    double previous_energy() const noexcept { return previous_; }
    double last_energy() const noexcept { return last_; }

private:
    double previous_;
    double last_;
};

class DegenerateFit : public Error {
public:
    DegenerateFit(std::string origin, const std::string& what, double condition_number)
        : Error(std::move(origin), what), condition_(condition_number) {}
    double condition_number() const noexcept { return condition_; }

private:
    double condition_;
};

/// Nonlinear fit did not produce an acceptable optimum. Carries the cost
/// history so callers can see how far the iteration got.
class FitFailure : public Error {
public:
    FitFailure(std::string origin, const std::string& what, std::vector<double> cost_trace = {})
        : Error(std::move(origin), what), trace_(std::move(cost_trace)) {}
    const std::vector<double>& cost_trace() const noexcept { return trace_; }

private:
    std::vector<double> trace_;
};

class ParseError : public Error {
public:
    ParseError(std::string origin, const std::string& what, std::size_t line)
        : Error(std::move(origin), what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    ValidationError(std::string origin, const std::string& what, std::string field)
        : Error(std::move(origin), what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace qloss
