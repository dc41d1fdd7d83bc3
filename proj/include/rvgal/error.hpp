#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rvgal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    /// Short machine-readable tag, used in CLI error JSON.
    virtual const char* kind() const noexcept { return "error"; }
};

/// Malformed arguments: dimension mismatches, non-finite parameters, bad counts.
class InvalidInput : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "invalid_input"; }
};

/// A factorization or evaluation that should succeed did not.
class NumericalError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numerical_error"; }
};

/// Every importance weight vanished.
class EstimatorDegenerate : public Error {
public:
    EstimatorDegenerate(const std::string& msg, std::string group_id = {})
        : Error(msg), group_id_(std::move(group_id)) {}
    const char* kind() const noexcept override { return "estimator_degenerate"; }
    const std::string& group_id() const noexcept { return group_id_; }

private:
    std::string group_id_;
};

/// The precision matrix could not be made positive definite within the jitter budget.
class NonPdPrecision : public Error {
public:
    NonPdPrecision(const std::string& msg, std::size_t iteration)
        : Error(msg), iteration_(iteration) {}
    const char* kind() const noexcept override { return "non_pd_precision"; }
    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

/// Input file or config does not match its declared schema.
class SchemaError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "schema_error"; }
};

}  // namespace rvgal
