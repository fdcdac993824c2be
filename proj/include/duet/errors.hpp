#pragma once

#include <stdexcept>
#include <string>

namespace duet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid parameters (zero rescaling, non-positive variance, malformed graph...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A mechanism produced a non-finite value or left its valid domain.
class DomainError : public Error {
public:
    using Error::Error;
};

/// The triangular inverse of the mixing function did not converge.
class InversionError : public Error {
public:
    using Error::Error;
};

/// A matrix that must be inverted is (numerically) singular.
class SingularError : public Error {
public:
    using Error::Error;
};

/// Eigen-structure of the similarity matrix violates the distinct-ratio hypothesis.
class SpectrumError : public Error {
public:
    using Error::Error;
};

/// Error raised inside `discover`, tagged with the stage that failed.
class PipelineError : public Error {
public:
    PipelineError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace duet
